//! Uniform view of vision and audio datasets as frame sequences.

use std::path::Path;

use serde::Deserialize;
use sps_datasets::audio::{AudioDataset, AudioManifest};
use sps_datasets::world::{VisionDataset, VisionManifest};

use crate::error::{CoreError, Result};
use crate::models::Task;

#[derive(Debug, Clone)]
pub struct Sequence {
    pub id: usize,
    /// `[T, C, H, W]`.
    pub frames: Vec<f32>,
    /// `[T, truth_dim]`: ball center in meters, or pitch in semitones.
    pub truths: Vec<f32>,
    /// `(hue, saturation)` of the ball, or `[timbre]`.
    pub style: Vec<f32>,
}

#[derive(Debug, Clone)]
pub enum Source {
    Vision(VisionManifest),
    Audio(AudioManifest),
}

#[derive(Debug, Clone)]
pub struct SeqData {
    pub task: Task,
    pub obs_shape: [usize; 3],
    pub seq_len: usize,
    pub truth_dim: usize,
    pub train: Vec<Sequence>,
    pub test: Vec<Sequence>,
    pub source: Source,
}

#[derive(Deserialize)]
struct Kind {
    kind: String,
}

impl SeqData {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        if !path.is_file() {
            return Err(CoreError::Config(format!("no dataset manifest at {}", path.display())));
        }
        let kind: Kind = crate::io::read_json(&path)?;
        match kind.kind.as_str() {
            "vision" => Ok(Self::from_vision(VisionDataset::load(dir)?)),
            "audio" => Ok(Self::from_audio(AudioDataset::load(dir)?)),
            other => Err(CoreError::format(&path, format!("unknown dataset kind `{other}`"))),
        }
    }

    pub fn from_vision(ds: VisionDataset) -> Self {
        let m = ds.manifest;
        let convert = |v: Vec<sps_datasets::world::Trajectory>| -> Vec<Sequence> {
            v.into_iter()
                .map(|t| Sequence {
                    id: t.header.id,
                    truths: t.truths.iter().flatten().copied().collect(),
                    style: vec![t.header.hue_sat.0, t.header.hue_sat.1],
                    frames: t.frames,
                })
                .collect()
        };
        let cam = &m.sim.camera;
        Self {
            task: Task::Vision,
            obs_shape: [3, cam.height, cam.width],
            seq_len: m.sim.frames,
            truth_dim: 3,
            train: convert(ds.train),
            test: convert(ds.test),
            source: Source::Vision(m),
        }
    }

    pub fn from_audio(ds: AudioDataset) -> Self {
        let m = ds.manifest;
        let (f, l) = ds
            .train
            .first()
            .map(|c| (c.header.freq_bins, c.header.frames))
            .unwrap_or((m.config.freq_bins, 16));
        let seq_len = ds.train.first().map_or(15, |c| c.header.segments);
        let convert = |v: Vec<sps_datasets::audio::AudioClip>| -> Vec<Sequence> {
            v.into_iter()
                .map(|c| Sequence {
                    id: c.header.id,
                    truths: c.true_pitches().iter().map(|&p| p as f32).collect(),
                    style: vec![c.header.timbre as f32],
                    frames: c.data,
                })
                .collect()
        };
        Self {
            task: Task::Audio,
            obs_shape: [1, f, l],
            seq_len,
            truth_dim: 1,
            train: convert(ds.train),
            test: convert(ds.test),
            source: Source::Audio(m),
        }
    }

    pub fn frame_len(&self) -> usize {
        self.obs_shape.iter().product()
    }

    /// Dataset generation seed.
    pub fn seed(&self) -> u64 {
        match &self.source {
            Source::Vision(m) => m.seed,
            Source::Audio(m) => m.seed,
        }
    }

    /// Keeps only the first `n` training sequences.
    pub fn truncate_train(&mut self, n: usize) {
        self.train.truncate(n);
    }
}
