//! Latent traversals and the decoded color map.

use std::path::Path;

use sps_datasets::image::{rgb_to_hsv, Image};

use super::LatentStats;
use crate::error::{CoreError, Result};
use crate::models::Model;

/// Decoded observations for each traversed dim at `m` evenly spaced values
/// from −2σ to +2σ, every other dim held at its test mean.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalGrid {
    pub dims: Vec<usize>,
    /// Offsets in units of σ.
    pub steps: Vec<f64>,
    pub obs_shape: [usize; 3],
    /// `[dims, m, C, H, W]`.
    pub frames: Vec<f32>,
}

/// `m` points of `linspace(−2, 2, m)`; a single point sits at 0.
pub fn sigma_steps(m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..m).map(|i| -2.0 + 4.0 * i as f64 / (m - 1) as f64).collect(),
    }
}

fn latent_at(stats: &LatentStats, offsets: &[(usize, f64)]) -> Vec<f32> {
    let mut z: Vec<f32> = stats.mean.iter().map(|&v| v as f32).collect();
    for &(j, s) in offsets {
        z[j] = (stats.mean[j] + s * stats.std[j]) as f32;
    }
    z
}

pub fn traverse(model: &Model, stats: &LatentStats, dims: &[usize], m: usize) -> Result<TraversalGrid> {
    let d = model.config.latent_dim();
    if m == 0 || dims.is_empty() || dims.iter().any(|&j| j >= d) {
        return Err(CoreError::Config(format!("traversal needs m ≥ 1 and dims below {d}")));
    }
    let steps = sigma_steps(m);
    let z: Vec<f32> = dims
        .iter()
        .flat_map(|&j| steps.iter().flat_map(move |&s| latent_at(stats, &[(j, s)])))
        .collect();
    Ok(TraversalGrid {
        dims: dims.to_vec(),
        steps,
        obs_shape: model.config.obs_shape,
        frames: model.decode_latents(&z)?,
    })
}

/// One observation as an RGB image; single-channel spectrogram slices are
/// shown in gray with low frequencies at the bottom.
pub fn observation_image(obs: &[f32], shape: [usize; 3]) -> Result<Image> {
    let [c, h, w] = shape;
    match c {
        3 => Ok(Image::from_planar(w, h, obs.to_vec())?),
        1 => {
            let mut img = Image::filled(w, h, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let v = obs[(h - 1 - i) * w + j];
                    for ch in 0..3 {
                        img.set(ch, i, j, v);
                    }
                }
            }
            Ok(img)
        }
        _ => Err(CoreError::Contract(format!("cannot show {c}-channel observations"))),
    }
}

impl TraversalGrid {
    pub fn m(&self) -> usize {
        self.steps.len()
    }

    /// Sheet with one row per traversed dim and one column per step.
    pub fn image(&self) -> Result<Image> {
        let len: usize = self.obs_shape.iter().product();
        let tiles = self
            .frames
            .chunks(len)
            .map(|f| observation_image(f, self.obs_shape))
            .collect::<Result<Vec<_>>>()?;
        Ok(Image::grid(&tiles, self.m(), 1, 1.0)?)
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        Ok(self.image()?.save_ppm(path)?)
    }
}

/// `(hue, saturation, value)` of the most saturated pixel of a `[3, H, W]`
/// frame.
pub fn detect_color(frame: &[f32], h: usize, w: usize) -> (f32, f32, f32) {
    let n = h * w;
    (0..n)
        .map(|p| rgb_to_hsv([frame[p], frame[n + p], frame[2 * n + p]].map(|v| v.clamp(0.0, 1.0))))
        .fold((0.0, -1.0, 0.0), |best, hsv| if hsv.1 > best.1 { hsv } else { best })
}

/// Detected ball colors over an `m × m` grid of two latent dims; row `i`
/// varies `dims.0`, column `j` varies `dims.1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorMap {
    pub dims: (usize, usize),
    pub steps: Vec<f64>,
    /// Row-major `[m, m]` RGB at full value.
    pub colors: Vec<[f32; 3]>,
}

pub fn color_map(model: &Model, stats: &LatentStats, dims: (usize, usize), m: usize) -> Result<ColorMap> {
    let [c, h, w] = model.config.obs_shape;
    let d = model.config.latent_dim();
    if c != 3 || dims.0 >= d || dims.1 >= d || dims.0 == dims.1 || m == 0 {
        return Err(CoreError::Config("color map needs an RGB model and two distinct latent dims".into()));
    }
    let steps = sigma_steps(m);
    let z: Vec<f32> = steps
        .iter()
        .flat_map(|&a| steps.iter().flat_map(move |&b| latent_at(stats, &[(dims.0, a), (dims.1, b)])))
        .collect();
    let frames = model.decode_latents(&z)?;
    let colors = frames
        .chunks(c * h * w)
        .map(|f| {
            let (hue, sat, _) = detect_color(f, h, w);
            sps_datasets::image::hsv_to_rgb(hue, sat, 1.0)
        })
        .collect();
    Ok(ColorMap { dims, steps, colors })
}

impl ColorMap {
    /// Swatch matrix with `cell × cell` pixels per grid point.
    pub fn image(&self, cell: usize) -> Image {
        let m = self.steps.len();
        let mut img = Image::filled(m * cell, m * cell, 0.0);
        for (k, rgb) in self.colors.iter().enumerate() {
            let (r, c) = (k / m, k % m);
            for i in 0..cell {
                for j in 0..cell {
                    for (ch, &v) in rgb.iter().enumerate() {
                        img.set(ch, r * cell + i, c * cell + j, v);
                    }
                }
            }
        }
        img
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps() {
        assert_eq!(sigma_steps(1), vec![0.0]);
        assert_eq!(sigma_steps(5), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn color_detector_prefers_saturated_pixels() {
        let (h, w) = (2, 2);
        let mut f = vec![0.5; 12];
        f[3] = 1.0;
        f[7] = 0.0;
        f[11] = 0.0;
        let (hue, sat, _) = detect_color(&f, h, w);
        assert!(hue.abs() < 1e-6 && (sat - 1.0).abs() < 1e-6);
    }
}
