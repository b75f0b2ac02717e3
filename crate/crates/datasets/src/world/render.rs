//! Rasterizes a shaded ball over a constant background.

use serde::{Deserialize, Serialize};

use super::camera::Camera;
use crate::error::{DataError, Result};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub background: f32,
    /// Light direction in camera coordinates (x right, y up, z forward),
    /// pointing from the ball toward the light.
    pub light: [f64; 3],
    pub ambient: f64,
    /// Subsamples per pixel along each axis.
    pub supersample: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            background: 0.05,
            light: [0.0, 0.6, -0.8],
            ambient: 0.35,
            supersample: 4,
        }
    }
}

/// Renders a ball of `radius` centered at world point `center`.
pub fn render(
    center: [f64; 3],
    radius: f64,
    color: [f32; 3],
    camera: &Camera,
    cfg: &RenderConfig,
) -> Result<Image> {
    let pr = camera
        .project(center)
        .ok_or_else(|| DataError::Contract(format!("ball at {center:?} is behind the camera")))?;
    let rad = camera.projected_radius(radius, pr.depth);
    let (w, h) = (camera.width, camera.height);
    let mut img = Image::filled(w, h, cfg.background);
    let l = {
        let n = cfg.light.iter().map(|a| a * a).sum::<f64>().sqrt();
        cfg.light.map(|a| a / n)
    };
    let s = cfg.supersample.max(1);
    let inv = 1.0 / (s * s) as f64;
    let lo_i = ((pr.v - rad).floor().max(0.0)) as usize;
    let hi_i = ((pr.v + rad).ceil().min(h as f64)).max(0.0) as usize;
    let lo_j = ((pr.u - rad).floor().max(0.0)) as usize;
    let hi_j = ((pr.u + rad).ceil().min(w as f64)).max(0.0) as usize;
    for i in lo_i..hi_i {
        for j in lo_j..hi_j {
            let mut coverage = 0.0;
            let mut shade = 0.0;
            for a in 0..s {
                for b in 0..s {
                    let du = (j as f64 + (b as f64 + 0.5) / s as f64 - pr.u) / rad;
                    let dv = (i as f64 + (a as f64 + 0.5) / s as f64 - pr.v) / rad;
                    let rr = du * du + dv * dv;
                    if rr > 1.0 {
                        continue;
                    }
                    // Visible hemisphere normal: x right, y up, z toward the viewer.
                    let n = [du, -dv, -(1.0 - rr).sqrt()];
                    let lambert = (n[0] * l[0] + n[1] * l[1] + n[2] * l[2]).max(0.0);
                    coverage += inv;
                    shade += inv * (cfg.ambient + (1.0 - cfg.ambient) * lambert);
                }
            }
            if coverage == 0.0 {
                continue;
            }
            for (c, &col) in color.iter().enumerate() {
                let bg = cfg.background as f64;
                let v = bg * (1.0 - coverage) + col as f64 * shade;
                img.set(c, i, j, v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixels_stay_in_unit_range() {
        let cam = Camera::default();
        let img = render([0.5, 1.5, 4.0], 0.5, [1.0, 1.0, 1.0], &cam, &RenderConfig::default())
            .unwrap();
        assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(img.data().iter().any(|&v| v > 0.5));
    }

    #[test]
    fn behind_camera_is_an_error() {
        let cam = Camera::default();
        let r = render([0.0, 2.0, -8.0], 0.5, [1.0; 3], &cam, &RenderConfig::default());
        assert!(matches!(r, Err(DataError::Contract(_))));
    }
}
