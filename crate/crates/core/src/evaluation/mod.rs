//! Metrics and analyses of trained models.

pub mod disentangle;
pub mod linear;
pub mod pitch;
pub mod recon;
pub mod traversal;

use serde::{Deserialize, Serialize};

use crate::data::{SeqData, Sequence, Source};
use crate::error::{CoreError, Result};
use crate::groups::GroupSpec;
use crate::models::{Mode, Model, Task, Variant};
use disentangle::{LatentPairs, ObservationPairs, QueryResult};

pub use linear::{linear_fit, r_squared, LinearFit};

/// A number, or `"N/A"` where the metric does not apply to the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metric {
    Value(f64),
    Na(NaTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NaTag {
    #[serde(rename = "N/A")]
    NA,
}

#[allow(non_upper_case_globals)]
impl Metric {
    pub const NA: Metric = Metric::Na(NaTag::NA);

    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Na(_) => None,
        }
    }
}

impl From<Option<f64>> for Metric {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Metric::NA, Metric::Value)
    }
}

/// Per-dim statistics of test-set encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl LatentStats {
    pub fn of(z: &[f32], d: usize) -> Result<Self> {
        if d == 0 || z.is_empty() || z.len() % d != 0 {
            return Err(CoreError::Contract("latent statistics need a non-empty [N, d] stack".into()));
        }
        let n = (z.len() / d) as f64;
        let mut s = LatentStats {
            mean: vec![0.0; d],
            std: vec![0.0; d],
            min: vec![f64::INFINITY; d],
            max: vec![f64::NEG_INFINITY; d],
        };
        for row in z.chunks(d) {
            for (j, &v) in row.iter().enumerate() {
                let v = v as f64;
                s.mean[j] += v / n;
                s.min[j] = s.min[j].min(v);
                s.max[j] = s.max[j].max(v);
            }
        }
        for row in z.chunks(d) {
            for (j, &v) in row.iter().enumerate() {
                s.std[j] += (v as f64 - s.mean[j]).powi(2) / n;
            }
        }
        s.std.iter_mut().for_each(|v| *v = v.sqrt());
        Ok(s)
    }
}

/// Posterior means of every frame of `seqs`, `[Σ T, d]` in sequence order.
pub fn encode_sequences(model: &Model, seqs: &[Sequence]) -> Result<Vec<f32>> {
    let frames: Vec<f32> = seqs.iter().flat_map(|s| s.frames.iter().copied()).collect();
    if frames.is_empty() {
        return Err(CoreError::Contract("no frames to encode".into()));
    }
    model.encode_frames(&frames)
}

/// Which latent dims count as content and style in the disentanglement
/// probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorDims {
    /// Content dims under style augmentation.
    pub content: Vec<usize>,
    pub style: Vec<usize>,
    /// Positives under content augmentation.
    pub content_positives: Vec<usize>,
}

impl FactorDims {
    /// SPS+ splits `z` into its content and style parts. A plain SPS model
    /// with more dims than the task's content factor counts the dims its group
    /// acts on as content and the rest as style; content augmentation still
    /// targets the first `task.content_dim()` dims.
    pub fn for_model(model: &Model, group: &GroupSpec) -> Option<Self> {
        let cfg = &model.config;
        let (d, dc) = (cfg.latent_dim(), cfg.content_dim);
        match cfg.variant {
            Variant::SpsPlus => Some(Self {
                content: (0..dc).collect(),
                style: (dc..d).collect(),
                content_positives: (0..dc).collect(),
            }),
            Variant::Sps if dc > cfg.task.content_dim() && !group.is_trivial() => {
                let acted = group.acted_dims();
                Some(Self {
                    style: (0..d).filter(|j| !acted.contains(j)).collect(),
                    content: acted,
                    content_positives: (0..cfg.task.content_dim()).collect(),
                })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub task: Task,
    pub variant: Variant,
    pub mode: Mode,
    pub k: Option<usize>,
    pub group: Option<String>,
    pub seed: u64,
    pub iterations: u64,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub dataset_seed: u64,
    pub eval_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disentanglement {
    pub dims: FactorDims,
    pub pairs: usize,
    pub delta_z_ratio: f64,
    pub style_augmentation: QueryResult,
    pub content_augmentation: QueryResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: RunMeta,
    /// Probe from content dims to ball location or pitch.
    pub per_axis_mse: Vec<f64>,
    pub aggregate_mse: f64,
    pub probe_r2: Vec<f64>,
    pub embedding_r2: Metric,
    pub synthesis_r2: Metric,
    pub synthesis_unvoiced: Option<usize>,
    pub self_recon_bce: f64,
    pub image_pred_bce: Metric,
    pub prior_mse: Metric,
    pub delta_z_ratio: Metric,
    pub style_query_precision: Metric,
    pub content_query_precision: Metric,
    pub disentanglement: Option<Disentanglement>,
    pub latent_stats: LatentStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub seed: u64,
    pub pitch: pitch::PitchOptions,
    /// Augmentation pairs per disentanglement probe.
    pub pairs: usize,
    /// Skip the Griffin-Lim synthesis probe.
    pub skip_synthesis: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            pitch: pitch::PitchOptions::default(),
            pairs: 512,
            skip_synthesis: false,
        }
    }
}

fn encode_pairs(model: &Model, pairs: &ObservationPairs) -> Result<LatentPairs> {
    Ok(LatentPairs {
        d: model.config.latent_dim(),
        anchor: model.encode_frames(&pairs.anchor)?,
        augmented: model.encode_frames(&pairs.augmented)?,
    })
}

fn disentanglement(model: &Model, data: &SeqData, stats: &LatentStats, dims: FactorDims, n: usize, seed: u64) -> Result<Disentanglement> {
    let frame = data.frame_len();
    let (style_pairs, content_pairs) = match &data.source {
        Source::Vision(m) => (
            disentangle::vision_color_pairs(m, &data.test, n, seed)?,
            disentangle::vision_location_pairs(&data.test, data.seq_len, frame, n, seed)?,
        ),
        Source::Audio(m) => (
            disentangle::audio_timbre_pairs(m, &data.test, n, seed)?,
            disentangle::audio_pitch_pairs(&data.test, data.seq_len, frame, n, seed)?,
        ),
    };
    let style_pairs = encode_pairs(model, &style_pairs)?;
    let content_pairs = encode_pairs(model, &content_pairs)?;
    Ok(Disentanglement {
        delta_z_ratio: disentangle::delta_z_ratio(&style_pairs, &stats.std, &dims.content, &dims.style)?,
        style_augmentation: disentangle::query_precision(&style_pairs, &stats.std, &dims.style)?,
        content_augmentation: disentangle::query_precision(&content_pairs, &stats.std, &dims.content_positives)?,
        pairs: n,
        dims,
    })
}

/// Every metric that applies to `model` on the test split of `data`.
pub fn evaluate(model: &Model, data: &SeqData, group: &GroupSpec, meta: RunMeta, opts: &EvalOptions) -> Result<EvalReport> {
    let cfg = &model.config;
    if cfg.task != data.task || cfg.obs_shape != data.obs_shape {
        return Err(CoreError::Config(format!(
            "checkpoint is a {} model for {:?} observations; dataset is {} with {:?}",
            cfg.task.name(),
            cfg.obs_shape,
            data.task.name(),
            data.obs_shape
        )));
    }
    if data.test.is_empty() {
        return Err(CoreError::Config("dataset has no test sequences".into()));
    }
    let (d, dc) = (cfg.latent_dim(), cfg.content_dim);
    let z = encode_sequences(model, &data.test)?;
    let stats = LatentStats::of(&z, d)?;
    let zc: Vec<f64> = z.chunks(d).flat_map(|r| r[..dc].iter().map(|&v| v as f64)).collect();
    let truth: Vec<f64> = data.test.iter().flat_map(|s| s.truths.iter().map(|&v| v as f64)).collect();
    let fit = linear_fit(&zc, dc, &truth, data.truth_dim)?;

    let (mut embedding_r2, mut synthesis_r2, mut synthesis_unvoiced) = (Metric::NA, Metric::NA, None);
    if let Source::Audio(m) = &data.source {
        embedding_r2 = Metric::Value(pitch::embedding_r2(model, &data.test)?);
        if !opts.skip_synthesis {
            let mut popts = opts.pitch.clone();
            popts.seed = opts.seed;
            let probe = pitch::synthesis_probe(model, &stats, m.reference_power, &popts)?;
            synthesis_unvoiced = Some(probe.unvoiced());
            synthesis_r2 = probe.r2()?.into();
            if synthesis_r2 == Metric::NA {
                log::warn!("synthesis pitch probe failed: {}/{} points unvoiced", probe.unvoiced(), popts.points);
            }
        }
    }

    let recon = recon::recon_pred_metrics(model, &data.test, data.seq_len)?;
    let dis = match FactorDims::for_model(model, group) {
        Some(dims) => Some(disentanglement(model, data, &stats, dims, opts.pairs, opts.seed)?),
        None => None,
    };
    Ok(EvalReport {
        meta,
        per_axis_mse: fit.per_axis_mse,
        aggregate_mse: fit.aggregate_mse,
        probe_r2: fit.r2,
        embedding_r2,
        synthesis_r2,
        synthesis_unvoiced,
        self_recon_bce: recon.self_recon_bce,
        image_pred_bce: recon.image_pred_bce,
        prior_mse: recon.prior_mse,
        delta_z_ratio: dis.as_ref().map(|d| d.delta_z_ratio).into(),
        style_query_precision: dis.as_ref().map(|d| d.style_augmentation.precision).into(),
        content_query_precision: dis.as_ref().map(|d| d.content_augmentation.precision).into(),
        disentanglement: dis,
        latent_stats: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_serializes_na() {
        assert_eq!(serde_json::to_string(&Metric::NA).unwrap(), "\"N/A\"");
        assert_eq!(serde_json::to_string(&Metric::Value(0.5)).unwrap(), "0.5");
        let back: Metric = serde_json::from_str("\"N/A\"").unwrap();
        assert_eq!(back, Metric::NA);
        let back: Metric = serde_json::from_str("0.25").unwrap();
        assert_eq!(back, Metric::Value(0.25));
    }

    #[test]
    fn latent_stats() {
        let s = LatentStats::of(&[1.0, 0.0, 3.0, 0.0], 2).unwrap();
        assert_eq!(s.mean, vec![2.0, 0.0]);
        assert_eq!(s.std, vec![1.0, 0.0]);
        assert_eq!((s.min[0], s.max[0]), (1.0, 3.0));
    }
}
