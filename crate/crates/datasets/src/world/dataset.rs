//! Bouncing-ball trajectories and on-disk datasets.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::physics::{simulate_states, SimConfig};
use super::render::{render, RenderConfig};
use crate::blob::{read_blob, read_json, write_blob, write_json};
use crate::error::{DataError, Result};
use crate::image::{hsv_to_rgb, Image};
use crate::seed::rng_for;

/// Fixed ball color of single-color datasets.
pub const GREEN_HS: (f32, f32) = (1.0 / 3.0, 0.75);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub id: usize,
    /// `(hue, saturation)` of the ball.
    pub hue_sat: (f32, f32),
    pub rgb: [f32; 3],
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub sim: SimConfig,
    pub render: RenderConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub header: TrajectoryHeader,
    /// `[T, 3, H, W]`.
    pub frames: Vec<f32>,
    /// `[T, 3]` ball centers in meters.
    pub truths: Vec<[f32; 3]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.header.frames
    }

    pub fn is_empty(&self) -> bool {
        self.header.frames == 0
    }

    pub fn frame_len(&self) -> usize {
        3 * self.header.width * self.header.height
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn frame_image(&self, t: usize) -> Image {
        Image::from_planar(self.header.width, self.header.height, self.frame(t).to_vec())
            .expect("frame size matches header")
    }
}

/// Simulates and renders one trajectory.
pub fn simulate_trajectory<R: Rng>(
    id: usize,
    hue_sat: (f32, f32),
    sim: &SimConfig,
    rcfg: &RenderConfig,
    rng: &mut R,
) -> Result<Trajectory> {
    sim.validate()?;
    let states = simulate_states(sim, rng)?;
    let rgb = hsv_to_rgb(hue_sat.0, hue_sat.1, 1.0);
    let mut frames = Vec::with_capacity(states.len() * 3 * sim.camera.width * sim.camera.height);
    for s in &states {
        frames.extend(render(s.position, sim.radius, rgb, &sim.camera, rcfg)?.into_data());
    }
    let truths = states.iter().map(|s| s.position.map(|v| v as f32)).collect();
    Ok(Trajectory {
        header: TrajectoryHeader {
            id,
            hue_sat,
            rgb,
            frames: states.len(),
            width: sim.camera.width,
            height: sim.camera.height,
            sim: sim.clone(),
            render: rcfg.clone(),
        },
        frames,
        truths,
    })
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut payload = traj.frames.clone();
    payload.extend(traj.truths.iter().flatten());
    write_blob(path, &traj.header, &payload)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    let (header, mut payload): (TrajectoryHeader, _) =
        read_blob(path, |h: &TrajectoryHeader| h.frames * (3 * h.width * h.height + 3))?;
    let split = header.frames * 3 * header.width * header.height;
    let truths = payload[split..]
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    payload.truncate(split);
    Ok(Trajectory {
        header,
        frames: payload,
        truths,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionManifest {
    pub kind: String,
    pub seed: u64,
    pub n_traj: usize,
    pub variable_color: bool,
    pub sim: SimConfig,
    pub render: RenderConfig,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub const VISION_KIND: &str = "vision";
pub const MANIFEST: &str = "manifest.json";

pub fn trajectory_file(id: usize) -> String {
    format!("traj_{id:05}.bin")
}

/// Every tenth trajectory goes to the test split.
pub fn split_ids(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|i| i % 10 != 9)
}

/// Style coordinate of trajectory `id`.
pub fn trajectory_color(seed: u64, id: usize, variable_color: bool) -> (f32, f32) {
    if !variable_color {
        return GREEN_HS;
    }
    let mut rng = rng_for(seed, "color", id as u64);
    (rng.random_range(0.0..1.0), rng.random_range(0.0..=1.0))
}

/// Generates one trajectory of a dataset purely from `(seed, id)`.
pub fn dataset_trajectory(
    seed: u64,
    id: usize,
    variable_color: bool,
    sim: &SimConfig,
    rcfg: &RenderConfig,
) -> Result<Trajectory> {
    let mut rng = rng_for(seed, "trajectory", id as u64);
    simulate_trajectory(id, trajectory_color(seed, id, variable_color), sim, rcfg, &mut rng)
}

/// Writes `n_traj` trajectory files and a manifest into `dir`.
pub fn make_dataset(
    dir: &Path,
    n_traj: usize,
    variable_color: bool,
    sim: &SimConfig,
    rcfg: &RenderConfig,
    seed: u64,
) -> Result<VisionManifest> {
    if n_traj == 0 {
        return Err(DataError::Config("dataset needs at least one trajectory".into()));
    }
    sim.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    for id in 0..n_traj {
        let traj = dataset_trajectory(seed, id, variable_color, sim, rcfg)?;
        save_trajectory(&dir.join(trajectory_file(id)), &traj)?;
    }
    let (train, test) = split_ids(n_traj);
    let manifest = VisionManifest {
        kind: VISION_KIND.into(),
        seed,
        n_traj,
        variable_color,
        sim: sim.clone(),
        render: rcfg.clone(),
        train,
        test,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct VisionDataset {
    pub dir: PathBuf,
    pub manifest: VisionManifest,
    pub train: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl VisionDataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: VisionManifest = read_json(&dir.join(MANIFEST))?;
        if manifest.kind != VISION_KIND {
            return Err(DataError::format(
                &dir.join(MANIFEST),
                format!("expected a {VISION_KIND} dataset, found `{}`", manifest.kind),
            ));
        }
        let load = |ids: &[usize]| -> Result<Vec<Trajectory>> {
            ids.iter()
                .map(|&id| load_trajectory(&dir.join(trajectory_file(id))))
                .collect()
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            train: load(&manifest.train)?,
            test: load(&manifest.test)?,
            manifest,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_ninety_ten() {
        let (tr, te) = split_ids(512);
        assert_eq!(tr.len() + te.len(), 512);
        assert_eq!(te.len(), 51);
        let (tr, te) = split_ids(1);
        assert_eq!((tr, te), (vec![0], vec![]));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = dataset_trajectory(3, 0, true, &SimConfig::default(), &RenderConfig::default())
            .unwrap();
        let p = dir.path().join("t.bin");
        save_trajectory(&p, &t).unwrap();
        assert_eq!(load_trajectory(&p).unwrap(), t);
    }
}
