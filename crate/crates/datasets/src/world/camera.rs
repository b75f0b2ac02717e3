//! Fixed pinhole camera. Image `u` grows to the right, `v` grows downward;
//! pixel `(i, j)` covers `[j, j+1) × [i, i+1)`.

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub target: [f64; 3],
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
    /// Points closer than this (along the view axis) are rejected.
    pub near: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            position: [0.0, 2.0, -4.0],
            target: [0.0, 1.5, 5.0],
            fov_deg: 60.0,
            width: 32,
            height: 32,
            near: 0.5,
        }
    }
}

/// A world point seen from the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(DataError::Config("image extents must be positive".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(DataError::Config(format!("bad field of view {}", self.fov_deg)));
        }
        let f = sub(self.target, self.position);
        if dot(f, f) == 0.0 || cross(f, [0.0, 1.0, 0.0]) == [0.0; 3] {
            return Err(DataError::Config("camera must not look straight up or down".into()));
        }
        Ok(())
    }

    /// `(right, up, forward)` unit vectors in world coordinates.
    pub fn basis(&self) -> [[f64; 3]; 3] {
        let forward = normalize(sub(self.target, self.position));
        let right = normalize(cross([0.0, 1.0, 0.0], forward));
        let up = cross(forward, right);
        [right, up, forward]
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_deg.to_radians()).tan()
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let d = sub(p, self.position);
        let [r, u, f] = self.basis();
        [dot(d, r), dot(d, u), dot(d, f)]
    }

    /// Projects a world point; `None` when it is not in front of the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<Projection> {
        let [xc, yc, zc] = self.to_camera(p);
        if zc < self.near {
            return None;
        }
        let f = self.focal();
        Some(Projection {
            u: 0.5 * self.width as f64 + f * xc / zc,
            v: 0.5 * self.height as f64 - f * yc / zc,
            depth: zc,
        })
    }

    /// World point at view depth `depth` seen at image position `(u, v)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let f = self.focal();
        let xc = (u - 0.5 * self.width as f64) * depth / f;
        let yc = (0.5 * self.height as f64 - v) * depth / f;
        let [r, up, fw] = self.basis();
        std::array::from_fn(|i| self.position[i] + xc * r[i] + yc * up[i] + depth * fw[i])
    }

    pub fn projected_radius(&self, radius: f64, depth: f64) -> f64 {
        self.focal() * radius / depth
    }

    /// True when the whole disc of a ball at `p` lies inside the image.
    pub fn fully_visible(&self, p: [f64; 3], radius: f64) -> bool {
        let Some(pr) = self.project(p) else {
            return false;
        };
        let rad = self.projected_radius(radius, pr.depth);
        pr.depth - radius >= self.near
            && pr.u - rad >= 0.0
            && pr.u + rad <= self.width as f64
            && pr.v - rad >= 0.0
            && pr.v + rad <= self.height as f64
    }
}
