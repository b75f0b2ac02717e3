//! Latent group actions: translations on some dims, an SO(2)/SO(3) rotation
//! on others, applied rotate-then-translate.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    /// Dims shifted by `U(-translation_range, translation_range)`.
    pub translate: Vec<usize>,
    /// Dims rotated together; empty, 2 or 3 entries.
    pub rotate: Vec<usize>,
    pub translation_range: f64,
}

impl GroupSpec {
    pub fn new(name: &str, translate: &[usize], rotate: &[usize]) -> Self {
        Self {
            name: name.into(),
            translate: translate.to_vec(),
            rotate: rotate.to_vec(),
            translation_range: 1.0,
        }
    }

    pub fn none() -> Self {
        Self::new("none", &[], &[])
    }

    /// `(R, +)` on dim 0.
    pub fn audio() -> Self {
        Self::new("T1", &[0], &[])
    }

    /// `(R², +) × SO(2)` on dims 0 and 2; dim 1 (height) untouched.
    pub fn vision() -> Self {
        Self::new("T2xSO2", &[0, 2], &[0, 2])
    }

    pub fn is_trivial(&self) -> bool {
        self.translate.is_empty() && self.rotate.is_empty()
    }

    /// Sorted union of translated and rotated dims.
    pub fn acted_dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.translate.iter().chain(&self.rotate).copied().collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        let distinct = |v: &[usize]| {
            let mut s = v.to_vec();
            s.sort_unstable();
            s.dedup();
            s.len() == v.len()
        };
        if !distinct(&self.translate) || !distinct(&self.rotate) {
            return Err(CoreError::Config(format!("group `{}`: repeated dims", self.name)));
        }
        if !matches!(self.rotate.len(), 0 | 2 | 3) {
            return Err(CoreError::Config(format!(
                "group `{}`: rotation needs 2 or 3 dims, got {}",
                self.name,
                self.rotate.len()
            )));
        }
        if let Some(&d) = self.acted_dims().last() {
            if d >= latent_dim {
                return Err(CoreError::Config(format!(
                    "group `{}` acts on dim {d} of a {latent_dim}-dim latent",
                    self.name
                )));
            }
        }
        if !(self.translation_range.is_finite() && self.translation_range >= 0.0) {
            return Err(CoreError::Config(format!(
                "group `{}`: bad translation range",
                self.name
            )));
        }
        Ok(())
    }
}

/// Affine map `z_u ← M z_u + t` on the acted dims `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    pub dims: Vec<usize>,
    /// Row-major `[n, n]`, orthogonal.
    pub matrix: Vec<f64>,
    pub shift: Vec<f64>,
}

impl GroupElement {
    pub fn identity(dims: Vec<usize>) -> Self {
        let n = dims.len();
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            matrix[i * n + i] = 1.0;
        }
        Self {
            dims,
            matrix,
            shift: vec![0.0; n],
        }
    }

    pub fn translation(dims: Vec<usize>, t: Vec<f64>) -> Self {
        let mut e = Self::identity(dims);
        e.shift = t;
        e
    }

    /// Planar rotation by `angle` on two dims.
    pub fn rotation2(dims: [usize; 2], angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let (a, b) = (dims[0], dims[1]);
        let mut e = Self::identity(vec![a.min(b), a.max(b)]);
        // Orientation follows the order the dims were given in.
        let sgn = if a < b { 1.0 } else { -1.0 };
        e.matrix = vec![c, -sgn * s, sgn * s, c];
        e
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Applies in place to one latent vector; other dims are not touched.
    pub fn apply(&self, z: &mut [f32]) -> Result<()> {
        let n = self.len();
        if let Some(&d) = self.dims.last() {
            if d >= z.len() {
                return Err(CoreError::Contract(format!(
                    "group element acts on dim {d} of a {}-dim vector",
                    z.len()
                )));
            }
        }
        let x: Vec<f64> = self.dims.iter().map(|&d| z[d] as f64).collect();
        for i in 0..n {
            let mut acc = self.shift[i];
            for j in 0..n {
                acc += self.matrix[i * n + j] * x[j];
            }
            z[self.dims[i]] = acc as f32;
        }
        Ok(())
    }

    /// Same element at every timestep of `[T, d]`.
    pub fn apply_seq(&self, z: &mut [f32], d: usize) -> Result<()> {
        if d == 0 || z.len() % d != 0 {
            return Err(CoreError::Contract(format!("{} values is not a [T, {d}] sequence", z.len())));
        }
        for row in z.chunks_mut(d) {
            self.apply(row)?;
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        let n = self.len();
        let mut mt = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                mt[i * n + j] = self.matrix[j * n + i];
            }
        }
        let shift = (0..n)
            .map(|i| -(0..n).map(|j| mt[i * n + j] * self.shift[j]).sum::<f64>())
            .collect();
        Self {
            dims: self.dims.clone(),
            matrix: mt,
            shift,
        }
    }

    /// `self` after `first`: `z ↦ self(first(z))`. Both must act on the same dims.
    pub fn compose(&self, first: &GroupElement) -> Result<Self> {
        if self.dims != first.dims {
            return Err(CoreError::Contract("composing elements on different dims".into()));
        }
        let n = self.len();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                m[i * n + j] = (0..n).map(|k| self.matrix[i * n + k] * first.matrix[k * n + j]).sum();
            }
        }
        let shift = (0..n)
            .map(|i| {
                self.shift[i] + (0..n).map(|k| self.matrix[i * n + k] * first.shift[k]).sum::<f64>()
            })
            .collect();
        Ok(Self {
            dims: self.dims.clone(),
            matrix: m,
            shift,
        })
    }

    /// Dense `[d, d]` matrix and `[d]` shift over the first `d` latent dims.
    pub fn dense(&self, d: usize) -> (Vec<f32>, Vec<f32>) {
        let mut m = vec![0f32; d * d];
        for i in 0..d {
            m[i * d + i] = 1.0;
        }
        let mut t = vec![0f32; d];
        let n = self.len();
        for (a, &da) in self.dims.iter().enumerate() {
            t[da] = self.shift[a] as f32;
            for (b, &db) in self.dims.iter().enumerate() {
                m[da * d + db] = self.matrix[a * n + b] as f32;
            }
        }
        (m, t)
    }

    pub fn determinant(&self) -> f64 {
        let n = self.len();
        let m = &self.matrix;
        match n {
            0 => 1.0,
            1 => m[0],
            2 => m[0] * m[3] - m[1] * m[2],
            3 => {
                m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                    + m[2] * (m[3] * m[7] - m[4] * m[6])
            }
            _ => f64::NAN,
        }
    }

    /// Largest `|MᵀM − I|` entry.
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.len();
        let m = &self.matrix;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
fn quaternion_matrix(q: [f64; 4]) -> [f64; 9] {
    let [w, x, y, z] = q;
    [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ]
}

/// Draws one element: translation `U(-r, r)` per translated dim, rotation
/// angle `U[0, 2π)` in 2D or a uniform quaternion in 3D.
pub fn sample_element<R: Rng>(spec: &GroupSpec, rng: &mut R) -> GroupElement {
    let dims = spec.acted_dims();
    let n = dims.len();
    let pos = |d: usize| dims.iter().position(|&x| x == d).unwrap();
    let mut e = GroupElement::identity(dims.clone());
    match spec.rotate.len() {
        2 => {
            let angle = rng.random_range(0.0..TAU);
            let (s, c) = angle.sin_cos();
            let (a, b) = (pos(spec.rotate[0]), pos(spec.rotate[1]));
            e.matrix[a * n + a] = c;
            e.matrix[a * n + b] = -s;
            e.matrix[b * n + a] = s;
            e.matrix[b * n + b] = c;
        }
        3 => {
            let mut q = [0.0; 4];
            let norm = loop {
                for v in q.iter_mut() {
                    *v = StandardNormal.sample(rng);
                }
                let nrm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if nrm > 1e-12 {
                    break nrm;
                }
            };
            q.iter_mut().for_each(|v| *v /= norm);
            let r = quaternion_matrix(q);
            let idx: Vec<usize> = spec.rotate.iter().map(|&d| pos(d)).collect();
            for i in 0..3 {
                for j in 0..3 {
                    e.matrix[idx[i] * n + idx[j]] = r[i * 3 + j];
                }
            }
        }
        _ => {}
    }
    let range = spec.translation_range;
    for &d in &spec.translate {
        e.shift[pos(d)] = if range > 0.0 {
            rng.random_range(-range..=range)
        } else {
            0.0
        };
    }
    e
}

/// Sampler that counts how many elements it has produced.
#[derive(Debug, Clone)]
pub struct GroupSampler {
    pub spec: GroupSpec,
    calls: u64,
}

impl GroupSampler {
    pub fn new(spec: GroupSpec) -> Self {
        Self { spec, calls: 0 }
    }

    pub fn sample<R: Rng>(&mut self, rng: &mut R) -> GroupElement {
        self.calls += 1;
        sample_element(&self.spec, rng)
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }
}

/// Group assumptions for the 3D vision latent: the no-symmetry baseline, five
/// incorrect assumptions, and the correct `(R², +) × SO(2)` last.
pub fn perturbed_spec_catalog() -> Vec<GroupSpec> {
    vec![
        GroupSpec::none(),
        GroupSpec::new("T1xSO2", &[0], &[0, 2]),
        GroupSpec::new("T2", &[0, 2], &[]),
        GroupSpec::new("SO2", &[], &[0, 2]),
        GroupSpec::new("T3xSO2", &[0, 1, 2], &[0, 2]),
        GroupSpec::new("T2xSO3", &[0, 2], &[0, 1, 2]),
        GroupSpec::vision(),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn translation_examples() {
        let e = GroupElement::translation(vec![0], vec![0.3]);
        let mut z = [0.5f32];
        e.apply(&mut z).unwrap();
        assert!((z[0] - 0.8).abs() < 1e-6);
        assert!((e.inverse().shift[0] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn quarter_turn() {
        let e = GroupElement::rotation2([0, 1], std::f64::consts::FRAC_PI_2);
        let mut z = [1.0f32, 0.0];
        e.apply(&mut z).unwrap();
        assert!(z[0].abs() < 1e-6 && (z[1] - 1.0).abs() < 1e-6);
        let inv = e.inverse();
        let minus = GroupElement::rotation2([0, 1], -std::f64::consts::FRAC_PI_2);
        for (a, b) in inv.matrix.iter().zip(&minus.matrix) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_is_noop() {
        let e = GroupElement::identity(vec![0, 2]);
        let mut z = [0.1f32, -0.7, 3.25];
        let orig = z;
        e.apply(&mut z).unwrap();
        assert_eq!(z, orig);
    }

    #[test]
    fn sampled_rotations_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in perturbed_spec_catalog() {
            for _ in 0..50 {
                let e = sample_element(&spec, &mut rng);
                assert!(e.orthogonality_error() < 1e-5, "{}", spec.name);
                assert!((e.determinant() - 1.0).abs() < 1e-5, "{}", spec.name);
            }
        }
    }

    #[test]
    fn translation_mean_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = GroupSpec::audio();
        let mean: f64 = (0..10_000)
            .map(|_| {
                let t = sample_element(&spec, &mut rng).shift[0];
                assert!((-1.0..=1.0).contains(&t));
                t
            })
            .sum::<f64>()
            / 10_000.0;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn catalog_shapes() {
        let cat = perturbed_spec_catalog();
        assert_eq!(cat.len(), 7);
        assert!(cat[0].is_trivial());
        assert_eq!(*cat.last().unwrap(), GroupSpec::vision());
        let t3 = cat.iter().find(|s| s.name == "T3xSO2").unwrap();
        assert_eq!((t3.translate.len(), t3.rotate.len()), (3, 2));
        let so2 = cat.iter().find(|s| s.name == "SO2").unwrap();
        assert!(so2.translate.is_empty());
        for s in &cat {
            s.validate(3).unwrap();
        }
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(GroupSpec::new("x", &[0], &[0]).validate(3).is_err());
        assert!(GroupSpec::new("x", &[3], &[]).validate(3).is_err());
        assert!(GroupSpec::new("x", &[0, 0], &[]).validate(3).is_err());
    }

    #[test]
    fn dense_matches_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = sample_element(&GroupSpec::vision(), &mut rng);
        let (m, t) = e.dense(3);
        let z = [0.3f32, -1.2, 0.8];
        let mut a = z;
        e.apply(&mut a).unwrap();
        for i in 0..3 {
            let v: f32 = t[i] + (0..3).map(|j| m[i * 3 + j] * z[j]).sum::<f32>();
            assert!((v - a[i]).abs() < 1e-6);
        }
    }
}
