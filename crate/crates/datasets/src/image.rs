//! Planar RGB images `[3, H, W]` with values in `[0, 1]`, and binary PPM export.

use std::io::Write;
use std::path::Path;

use crate::error::{DataError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; 3 * width * height],
        }
    }

    /// Wraps planar `[3, H, W]` data.
    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(DataError::Contract(format!(
                "{} values for a 3x{height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f32 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f32) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    pub fn pixel(&self, i: usize, j: usize) -> [f32; 3] {
        [self.get(0, i, j), self.get(1, i, j), self.get(2, i, j)]
    }

    /// Horizontal mirror.
    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for c in 0..3 {
            for i in 0..self.height {
                for j in 0..self.width {
                    out.set(c, i, j, self.get(c, i, self.width - 1 - j));
                }
            }
        }
        out
    }

    /// Tiles equally sized images row-major into a `rows × cols` sheet with
    /// `gap` pixels of `fill` between tiles.
    pub fn grid(tiles: &[Image], cols: usize, gap: usize, fill: f32) -> Result<Self> {
        let first = tiles
            .first()
            .ok_or_else(|| DataError::Contract("empty image grid".into()))?;
        let cols = cols.max(1);
        let (tw, th) = (first.width, first.height);
        if tiles.iter().any(|t| t.width != tw || t.height != th) {
            return Err(DataError::Contract("grid tiles differ in size".into()));
        }
        let rows = tiles.len().div_ceil(cols);
        let w = cols * tw + (cols - 1) * gap;
        let h = rows * th + (rows - 1) * gap;
        let mut out = Image::filled(w, h, fill);
        for (k, t) in tiles.iter().enumerate() {
            let (oi, oj) = ((k / cols) * (th + gap), (k % cols) * (tw + gap));
            for c in 0..3 {
                for i in 0..th {
                    for j in 0..tw {
                        out.set(c, oi + i, oj + j, t.get(c, i, j));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut bytes = Vec::with_capacity(3 * self.width * self.height);
        for i in 0..self.height {
            for j in 0..self.width {
                for c in 0..3 {
                    bytes.push((self.get(c, i, j).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        w.write_all(&bytes)
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        self.write_ppm(std::io::BufWriter::new(f))
            .map_err(|e| DataError::io(path, e))
    }
}

/// HSV (all components in `[0, 1]`) to RGB.
pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// RGB to `(hue, saturation, value)`, each in `[0, 1]`.
pub fn rgb_to_hsv([r, g, b]: [f32; 3]) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    if d == 0.0 {
        return (0.0, s, max);
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    (h / 6.0, s, max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_size() {
        let img = Image::filled(4, 2, 1.0);
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n4 2\n255\n"));
        assert_eq!(buf.len(), 11 + 24);
        assert!(buf[11..].iter().all(|&b| b == 255));
    }

    #[test]
    fn hsv_round_trip() {
        for k in 0..36 {
            let h = k as f32 / 36.0;
            let rgb = hsv_to_rgb(h, 0.7, 0.9);
            let (h2, s2, v2) = rgb_to_hsv(rgb);
            assert!((h - h2).abs() < 1e-5 || (h - h2).abs() > 1.0 - 1e-5);
            assert!((s2 - 0.7).abs() < 1e-5 && (v2 - 0.9).abs() < 1e-5);
        }
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn grid_places_tiles() {
        let a = Image::filled(2, 2, 0.2);
        let b = Image::filled(2, 2, 0.8);
        let g = Image::grid(&[a, b.clone(), b], 2, 1, 0.0).unwrap();
        assert_eq!((g.width(), g.height()), (5, 5));
        assert_eq!(g.get(0, 0, 0), 0.2);
        assert_eq!(g.get(1, 0, 3), 0.8);
        assert_eq!(g.get(2, 0, 2), 0.0);
        assert_eq!(g.get(0, 4, 1), 0.8);
    }
}
