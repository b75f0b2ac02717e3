//! Content/style disentanglement under factor-wise augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sps_datasets::audio::dataset::{plan_clips, render_clip};
use sps_datasets::audio::{spectrogram, AudioManifest};
use sps_datasets::image::hsv_to_rgb;
use sps_datasets::seed::rng_for;
use sps_datasets::world::{render, VisionManifest};

use crate::data::Sequence;
use crate::error::{CoreError, Result};

/// Encodings of anchor observations and their augmented partners, both
/// `[N, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPairs {
    pub d: usize,
    pub anchor: Vec<f32>,
    pub augmented: Vec<f32>,
}

impl LatentPairs {
    pub fn len(&self) -> usize {
        self.anchor.len() / self.d.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }

    fn check(&self, std: &[f64]) -> Result<()> {
        if self.d == 0 || self.anchor.len() != self.augmented.len() || self.anchor.len() % self.d != 0 {
            return Err(CoreError::Contract("latent pairs are not two [N, d] stacks".into()));
        }
        if self.is_empty() {
            return Err(CoreError::Contract("no latent pairs".into()));
        }
        if std.len() != self.d {
            return Err(CoreError::Contract(format!("{} scales for {} dims", std.len(), self.d)));
        }
        Ok(())
    }

    /// Normalized differences `(aug − anchor) / std`, row by row.
    fn deltas<'a>(&'a self, std: &'a [f64]) -> impl Iterator<Item = Vec<f64>> + 'a {
        self.anchor.chunks(self.d).zip(self.augmented.chunks(self.d)).map(move |(a, b)| {
            a.iter()
                .zip(b)
                .zip(std)
                .map(|((&a, &b), &s)| (b as f64 - a as f64) / s)
                .collect()
        })
    }
}

/// Mean ‖Δz_c‖₂ over mean ‖Δz_s‖₂ after scaling every dim by `std`.
pub fn delta_z_ratio(pairs: &LatentPairs, std: &[f64], content: &[usize], style: &[usize]) -> Result<f64> {
    pairs.check(std)?;
    if style.is_empty() || content.is_empty() {
        return Err(CoreError::Contract("Δz ratio needs content and style dims".into()));
    }
    if style.iter().any(|&j| !(std[j] > 0.0)) {
        return Err(CoreError::Data(sps_datasets::DataError::Config(
            "a style dim has zero variance over the test set".into(),
        )));
    }
    let norm = |v: &[f64], dims: &[usize]| dims.iter().map(|&j| v[j] * v[j]).sum::<f64>().sqrt();
    let (mut c, mut s) = (0.0, 0.0);
    for delta in pairs.deltas(std) {
        c += norm(&delta, content);
        s += norm(&delta, style);
    }
    if s == 0.0 {
        return Err(CoreError::Contract("style augmentation left the style dims unchanged".into()));
    }
    Ok(c / s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub precision: f64,
    /// Expected precision of a uniformly random choice of dims.
    pub random: f64,
    pub predicted: Vec<usize>,
    /// Mean squared normalized change per dim.
    pub variance: Vec<f64>,
}

/// Predicts the `|positives|` dims whose normalized augmentation variance is
/// largest and scores them by `TP / (TP + FP)`.
pub fn query_precision(pairs: &LatentPairs, std: &[f64], positives: &[usize]) -> Result<QueryResult> {
    pairs.check(std)?;
    if positives.is_empty() || positives.len() > pairs.d || positives.iter().any(|&j| j >= pairs.d) {
        return Err(CoreError::Contract("query positives must be distinct dims of z".into()));
    }
    if std.iter().any(|&s| !(s > 0.0)) {
        return Err(CoreError::Contract("latent scales must be positive".into()));
    }
    let mut variance = vec![0.0; pairs.d];
    for delta in pairs.deltas(std) {
        for (v, x) in variance.iter_mut().zip(&delta) {
            *v += x * x;
        }
    }
    let n = pairs.len() as f64;
    variance.iter_mut().for_each(|v| *v /= n);
    let mut order: Vec<usize> = (0..pairs.d).collect();
    order.sort_by(|&a, &b| variance[b].total_cmp(&variance[a]).then(a.cmp(&b)));
    let mut predicted = order[..positives.len()].to_vec();
    predicted.sort_unstable();
    Ok(QueryResult {
        precision: precision(&predicted, positives),
        random: positives.len() as f64 / pairs.d as f64,
        predicted,
        variance,
    })
}

/// `TP / (TP + FP)` of a predicted dim set.
pub fn precision(predicted: &[usize], positives: &[usize]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    let tp = predicted.iter().filter(|j| positives.contains(j)).count();
    tp as f64 / predicted.len() as f64
}

/// Observation pairs `[N, frame]` differing in one factor class.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPairs {
    pub anchor: Vec<f32>,
    pub augmented: Vec<f32>,
}

/// Test frames paired with the same ball position rendered in a random color.
pub fn vision_color_pairs(manifest: &VisionManifest, seqs: &[Sequence], n: usize, seed: u64) -> Result<ObservationPairs> {
    let sim = &manifest.sim;
    let frame = 3 * sim.camera.width * sim.camera.height;
    let mut rng = rng_for(seed, "color-pairs", 0);
    let mut out = ObservationPairs {
        anchor: Vec::with_capacity(n * frame),
        augmented: Vec::with_capacity(n * frame),
    };
    if seqs.is_empty() {
        return Err(CoreError::Contract("no test sequences to augment".into()));
    }
    for i in 0..n {
        let seq = &seqs[i % seqs.len()];
        let t = rng.random_range(0..sim.frames);
        let p = &seq.truths[t * 3..t * 3 + 3];
        let rgb = hsv_to_rgb(rng.random_range(0.0..1.0), rng.random_range(0.0..=1.0), 1.0);
        let img = render([p[0] as f64, p[1] as f64, p[2] as f64], sim.radius, rgb, &sim.camera, &manifest.render)?;
        out.anchor.extend_from_slice(&seq.frames[t * frame..(t + 1) * frame]);
        out.augmented.extend(img.into_data());
    }
    Ok(out)
}

/// Pairs of frames from the same test trajectory at two different times.
pub fn vision_location_pairs(seqs: &[Sequence], seq_len: usize, frame: usize, n: usize, seed: u64) -> Result<ObservationPairs> {
    if seqs.is_empty() || seq_len < 2 {
        return Err(CoreError::Contract("location pairs need sequences of length 2 or more".into()));
    }
    let mut rng = rng_for(seed, "location-pairs", 0);
    let mut out = ObservationPairs {
        anchor: Vec::with_capacity(n * frame),
        augmented: Vec::with_capacity(n * frame),
    };
    for i in 0..n {
        let seq = &seqs[i % seqs.len()];
        let a = rng.random_range(0..seq_len);
        let b = (a + rng.random_range(1..seq_len)) % seq_len;
        out.anchor.extend_from_slice(&seq.frames[a * frame..(a + 1) * frame]);
        out.augmented.extend_from_slice(&seq.frames[b * frame..(b + 1) * frame]);
    }
    Ok(out)
}

/// Test segments paired with the same notes played by another timbre.
pub fn audio_timbre_pairs(manifest: &AudioManifest, seqs: &[Sequence], n: usize, seed: u64) -> Result<ObservationPairs> {
    let family = manifest.timbres.len();
    if family < 2 {
        return Err(CoreError::Contract("timbre pairs need at least two timbres".into()));
    }
    if seqs.is_empty() {
        return Err(CoreError::Contract("no test sequences to augment".into()));
    }
    let plan = plan_clips(&manifest.config, manifest.seed);
    let bins = manifest.config.freq_bins;
    let mut rng = rng_for(seed, "timbre-pairs", 0);
    let mut out = ObservationPairs {
        anchor: Vec::new(),
        augmented: Vec::new(),
    };
    for i in 0..n {
        let seq = &seqs[i % seqs.len()];
        let (start, timbre, shift, _) = *plan
            .get(seq.id)
            .ok_or_else(|| CoreError::Contract(format!("clip {} is not in the dataset plan", seq.id)))?;
        let other = (timbre + rng.random_range(1..family)) % family;
        let spec = spectrogram(&render_clip(start, other, shift)?, bins)?;
        let k = rng.random_range(0..spec.segments);
        let len = spec.freq_bins * spec.frames;
        out.anchor.extend_from_slice(&seq.frames[k * len..(k + 1) * len]);
        out.augmented.extend_from_slice(spec.segment(k));
    }
    Ok(out)
}

/// Segments of the same test clip at two different notes.
pub fn audio_pitch_pairs(seqs: &[Sequence], seq_len: usize, frame: usize, n: usize, seed: u64) -> Result<ObservationPairs> {
    vision_location_pairs(seqs, seq_len, frame, n, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(rows: &[([f32; 3], [f32; 3])]) -> LatentPairs {
        LatentPairs {
            d: 3,
            anchor: rows.iter().flat_map(|r| r.0).collect(),
            augmented: rows.iter().flat_map(|r| r.1).collect(),
        }
    }

    #[test]
    fn style_only_changes_give_zero_ratio() {
        let p = pairs(&[([0.0, 1.0, 0.0], [0.0, 1.0, 2.0]), ([1.0, 0.0, 1.0], [1.0, 0.0, -1.0])]);
        assert_eq!(delta_z_ratio(&p, &[1.0; 3], &[0, 1], &[2]).unwrap(), 0.0);
        let q = query_precision(&p, &[1.0; 3], &[2]).unwrap();
        assert_eq!((q.precision, q.predicted.clone()), (1.0, vec![2]));
        assert!((q.random - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn content_tracking_style_gives_large_ratio() {
        let p = pairs(&[([0.0, 0.0, 0.0], [3.0, 0.0, 1.0])]);
        assert!(delta_z_ratio(&p, &[1.0; 3], &[0, 1], &[2]).unwrap() >= 1.0);
    }

    #[test]
    fn zero_style_variance_is_an_error() {
        let p = pairs(&[([0.0, 0.0, 0.0], [1.0, 0.0, 1.0])]);
        assert!(delta_z_ratio(&p, &[1.0, 1.0, 0.0], &[0, 1], &[2]).is_err());
    }

    #[test]
    fn worked_precision_example() {
        assert_eq!(precision(&[0, 2], &[1, 2]), 0.5);
        assert_eq!(precision(&[2], &[2]), 1.0);
    }
}
