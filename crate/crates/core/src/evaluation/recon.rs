//! Reconstruction and prediction losses on held-out sequences.

use serde::{Deserialize, Serialize};

use super::{encode_sequences, Metric};
use crate::data::Sequence;
use crate::error::Result;
use crate::models::{Model, Variant};

const CLAMP: f64 = 1e-7;
const SEQS_PER_CHUNK: usize = 16;

/// Mean binary cross-entropy per element with the training clamp.
pub fn bce_per_pixel(pred: &[f32], target: &[f32]) -> f64 {
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = (p as f64).clamp(CLAMP, 1.0 - CLAMP);
            let t = t as f64;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    total / pred.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconMetrics {
    pub self_recon_bce: f64,
    pub image_pred_bce: Metric,
    pub prior_mse: Metric,
}

/// Decoder inputs for the rows of one sequence: content rows `[n, d_c]` plus
/// the sequence's mean style code.
fn with_style(content: &[f32], style: &[f32], dc: usize) -> Vec<f32> {
    content.chunks(dc).flat_map(|c| c.iter().chain(style).copied()).collect()
}

/// Self-reconstruction BCE of `x′` against frames `1..=T`, and for models with
/// a prior the BCE of decoded one-step predictions against frames `2..=T` and
/// the per-element MSE of those predictions in latent space. SPS+ decodes
/// every row with the sequence-mean style code.
pub fn recon_pred_metrics(model: &Model, seqs: &[Sequence], seq_len: usize) -> Result<ReconMetrics> {
    let cfg = &model.config;
    let (d, dc, ds) = (cfg.latent_dim(), cfg.content_dim, cfg.style_dim);
    let frame = cfg.obs_len();
    let t = seq_len;
    let (mut rec_sum, mut rec_n) = (0.0, 0usize);
    let (mut pred_sum, mut pred_n) = (0.0, 0usize);
    let (mut mse_sum, mut mse_n) = (0.0, 0usize);
    for chunk in seqs.chunks(SEQS_PER_CHUNK) {
        let z = encode_sequences(model, chunk)?;
        let b = chunk.len();
        let mut content = Vec::with_capacity(b * t * dc);
        let mut styles = Vec::with_capacity(b * ds);
        for s in 0..b {
            let rows = &z[s * t * d..(s + 1) * t * d];
            content.extend(rows.chunks(d).flat_map(|r| r[..dc].to_vec()));
            styles.push((0..ds).map(|j| rows.chunks(d).map(|r| r[dc + j]).sum::<f32>() / t as f32).collect::<Vec<_>>());
        }
        let dec_in: Vec<f32> = if cfg.variant == Variant::SpsPlus {
            (0..b)
                .flat_map(|s| with_style(&content[s * t * dc..(s + 1) * t * dc], &styles[s], dc))
                .collect()
        } else {
            z.clone()
        };
        let recon = model.decode_latents(&dec_in)?;
        for (s, seq) in chunk.iter().enumerate() {
            let n = t * frame;
            rec_sum += bce_per_pixel(&recon[s * n..(s + 1) * n], &seq.frames[..n]) * n as f64;
            rec_n += n;
        }
        if !cfg.has_prior() {
            continue;
        }
        let pred = model.predict_next(&content, t)?;
        for s in 0..b {
            for step in 1..t {
                let p = &pred[(s * (t - 1) + step - 1) * dc..(s * (t - 1) + step) * dc];
                let target = &content[(s * t + step) * dc..(s * t + step + 1) * dc];
                mse_sum += p.iter().zip(target).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>();
                mse_n += dc;
            }
        }
        let pred_in: Vec<f32> = if cfg.variant == Variant::SpsPlus {
            (0..b)
                .flat_map(|s| with_style(&pred[s * (t - 1) * dc..(s + 1) * (t - 1) * dc], &styles[s], dc))
                .collect()
        } else {
            pred
        };
        let decoded = model.decode_latents(&pred_in)?;
        for (s, seq) in chunk.iter().enumerate() {
            let n = (t - 1) * frame;
            pred_sum += bce_per_pixel(&decoded[s * n..(s + 1) * n], &seq.frames[frame..t * frame]) * n as f64;
            pred_n += n;
        }
    }
    let ratio = |sum: f64, n: usize| if n == 0 { Metric::NA } else { Metric::Value(sum / n as f64) };
    Ok(ReconMetrics {
        self_recon_bce: rec_sum / rec_n.max(1) as f64,
        image_pred_bce: ratio(pred_sum, pred_n),
        prior_mse: ratio(mse_sum, mse_n),
    })
}
