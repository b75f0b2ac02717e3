//! Three-branch forward pass, loss stack and the optimization loop.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sps_autodiff::{Adam, AdamConfig, Graph, Tensor, Var};
use sps_datasets::seed::{derive_seed, rng_for};

use crate::data::SeqData;
use crate::error::{CoreError, Result};
use crate::groups::{GroupElement, GroupSampler, GroupSpec};
use crate::models::{rollout_teacher, Mode, Model, ModelConfig, Posterior, Prior, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Augmentation factor: group elements per sequence per iteration.
    pub k: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub iterations: u64,
    /// Iteration at which teacher forcing reaches zero.
    pub tf_decay_iterations: u64,
    /// Leading frames always fed from the data.
    pub context: usize,
    pub group: GroupSpec,
    pub seed: u64,
    /// Write a log row every this many iterations.
    pub log_every: u64,
    /// Intermediate checkpoint cadence; 0 keeps only the final one.
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn new(task: crate::models::Task) -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 2.0,
            lambda3: 0.01,
            k: 4,
            batch_size: 32,
            lr: 1e-3,
            iterations: 60_000,
            tf_decay_iterations: 50_000,
            context: task.context(),
            group: match task {
                crate::models::Task::Audio => GroupSpec::audio(),
                crate::models::Task::Vision => GroupSpec::vision(),
            },
            seed: 0,
            log_every: 10,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("train.{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("train.lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return bad("train.batch_size must be at least 1".into());
        }
        if self.context == 0 {
            return bad("train.context must be at least 1".into());
        }
        if self.log_every == 0 {
            return bad("train.log_every must be at least 1".into());
        }
        self.group.validate(model.content_dim)
    }

    /// Whether the symmetry branch runs for this model.
    pub fn uses_symmetry(&self, model: &ModelConfig) -> bool {
        model.has_prior() && self.k > 0 && !self.group.is_trivial()
    }
}

/// Linear decay from 1 at iteration 0 to 0 at `decay`.
pub fn teacher_forcing_prob(iteration: u64, decay: u64) -> f64 {
    if decay == 0 || iteration >= decay {
        0.0
    } else {
        1.0 - iteration as f64 / decay as f64
    }
}

/// Random choices of one iteration.
#[derive(Debug, Clone)]
pub struct Draws {
    /// `[B·T, d]` reparameterization noise (VAE mode).
    pub eps: Option<Tensor>,
    /// Pooled style step per sequence (SPS+).
    pub tau: Vec<usize>,
    /// `masks[s][b]`: step `s + 1` of sequence `b` reads the data.
    pub masks: Vec<Vec<bool>>,
    /// `elements[k][b]`.
    pub elements: Vec<Vec<GroupElement>>,
}

impl Draws {
    /// Noise-free, fully teacher-forced draws without augmentation.
    pub fn deterministic(b: usize, t: usize) -> Self {
        Self {
            eps: None,
            tau: vec![0; b],
            masks: vec![vec![true; b]; t.saturating_sub(2)],
            elements: Vec::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn sample<R: Rng>(
        model: &ModelConfig,
        cfg: &TrainConfig,
        b: usize,
        t: usize,
        tf_prob: f64,
        sampler: &mut GroupSampler,
        rng: &mut R,
    ) -> Self {
        let d = model.latent_dim();
        let eps = (model.mode == Mode::Vae).then(|| {
            Tensor::from_fn(&[b * t, d], |_| {
                let v: f32 = StandardNormal.sample(rng);
                v
            })
        });
        let tau = if model.style_dim > 0 {
            (0..b).map(|_| rng.random_range(0..t)).collect()
        } else {
            vec![0; b]
        };
        let mut masks = Vec::new();
        let mut elements = Vec::new();
        if model.has_prior() {
            masks = (0..t.saturating_sub(2))
                .map(|s| {
                    (0..b)
                        .map(|_| s + 1 < cfg.context || rng.random_bool(tf_prob.clamp(0.0, 1.0)))
                        .collect()
                })
                .collect();
            if cfg.uses_symmetry(model) {
                elements = (0..cfg.k)
                    .map(|_| (0..b).map(|_| sampler.sample(rng)).collect())
                    .collect();
            }
        }
        Self {
            eps,
            tau,
            masks,
            elements,
        }
    }
}

/// Decoded outputs and latents of the three branches. Rows of `x_direct`
/// are ordered `b·T + t`; rows of every next-step quantity `(t − 1)·B + b`
/// for `t = 1..T`.
#[derive(Debug, Clone)]
pub struct BranchOutputs {
    pub posterior: Posterior,
    pub z: Var,
    pub x_direct: Var,
    pub x_pred: Option<Var>,
    pub x_sym: Vec<Var>,
    pub z_next: Option<Var>,
    pub z_hat: Option<Var>,
    pub z_tilde: Vec<Var>,
}

fn dense_rows(elements: &[GroupElement], d: usize, rows_of: impl Fn(usize) -> usize, n_rows: usize) -> (Vec<f32>, Vec<f32>) {
    let dense: Vec<(Vec<f32>, Vec<f32>)> = elements.iter().map(|e| e.dense(d)).collect();
    let mut mats = Vec::with_capacity(n_rows * d * d);
    let mut shifts = Vec::with_capacity(n_rows * d);
    for r in 0..n_rows {
        let (m, s) = &dense[rows_of(r)];
        mats.extend_from_slice(m);
        shifts.extend_from_slice(s);
    }
    (mats, shifts)
}

/// Runs encoder, direct decode, prior branch and `K` symmetry branches on a
/// batch `x [B·T, C, H, W]`.
pub fn forward_three_branch(
    g: &mut Graph<'_>,
    model: &Model,
    prior: Option<&dyn Prior>,
    x: Tensor,
    b: usize,
    t: usize,
    draws: &Draws,
) -> Result<BranchOutputs> {
    let cfg = &model.config;
    let (dc, ds) = (cfg.content_dim, cfg.style_dim);
    if x.dim(0) != b * t || t < 2 {
        return Err(CoreError::Contract(format!("batch of {} frames is not {b}x{t}", x.dim(0))));
    }
    let xv = g.constant(x);
    let posterior = model.encode(g, xv)?;
    let z = model.sample(g, posterior, draws.eps.clone())?;
    let zc = if ds > 0 { g.slice_cols(z, 0, dc)? } else { z };
    let pooled = if ds > 0 {
        let zs = g.slice_cols(z, dc, ds)?;
        Some(zs)
    } else {
        None
    };
    // Style rows to pair with content rows in either ordering.
    let with_style = |g: &mut Graph<'_>, content: Var, seq_of_row: &dyn Fn(usize) -> usize| -> Result<Var> {
        match pooled {
            None => Ok(content),
            Some(zs) => {
                let n = g.value(content).dim(0);
                let idx = (0..n).map(|r| {
                    let s = seq_of_row(r);
                    s * t + draws.tau[s]
                });
                let style = g.gather_rows(zs, idx.collect())?;
                Ok(g.concat_cols(&[content, style])?)
            }
        }
    };
    let direct_in = with_style(g, zc, &|r| r / t)?;
    let x_direct = model.decode(g, direct_in)?;

    let mut out = BranchOutputs {
        posterior,
        z,
        x_direct,
        x_pred: None,
        x_sym: Vec::new(),
        z_next: None,
        z_hat: None,
        z_tilde: Vec::new(),
    };
    let Some(prior) = prior else {
        return Ok(out);
    };
    let steps = |g: &mut Graph<'_>, src: Var| -> Result<Vec<Var>> {
        (0..t)
            .map(|s| g.gather_rows(src, (0..b).map(|i| i * t + s).collect()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(CoreError::from)
    };
    let inputs = steps(g, zc)?;
    let z_next = g.concat_rows(&inputs[1..])?;
    let preds = rollout_teacher(g, prior, &inputs, &draws.masks)?;
    let z_hat = g.concat_rows(&preds)?;
    let pred_in = with_style(g, z_hat, &|r| r % b)?;
    out.x_pred = Some(model.decode(g, pred_in)?);

    for elems in &draws.elements {
        let (m, s) = dense_rows(elems, dc, |r| r / t, b * t);
        let moved = g.affine_rows(zc, m, &s)?;
        let moved_steps = steps(g, moved)?;
        let preds = rollout_teacher(g, prior, &moved_steps, &draws.masks)?;
        let stacked = g.concat_rows(&preds)?;
        let inverses: Vec<GroupElement> = elems.iter().map(GroupElement::inverse).collect();
        let (m, s) = dense_rows(&inverses, dc, |r| r % b, (t - 1) * b);
        let back = g.affine_rows(stacked, m, &s)?;
        let sym_in = with_style(g, back, &|r| r % b)?;
        out.x_sym.push(model.decode(g, sym_in)?);
        out.z_tilde.push(back);
    }
    out.z_next = Some(z_next);
    out.z_hat = Some(z_hat);
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub rec_direct: f64,
    pub rec_pred: f64,
    pub rec_sym: f64,
    pub prior: f64,
    pub sym: f64,
    pub kld: f64,
    pub weighted_prior: f64,
    pub weighted_sym: f64,
    pub weighted_kld: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.rec, self.prior, self.sym, self.kld]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Frames `1..T` of `x [B·T, ...]` reordered to `(t − 1)·B + b`.
pub fn next_step_targets(x: &Tensor, b: usize, t: usize) -> Result<Tensor> {
    let frame = x.len() / (b * t);
    let mut data = Vec::with_capacity((t - 1) * b * frame);
    for s in 1..t {
        for i in 0..b {
            let r = i * t + s;
            data.extend_from_slice(&x.data()[r * frame..(r + 1) * frame]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[0] = (t - 1) * b;
    Ok(Tensor::new(&shape, data)?)
}

/// `L = L_rec + λ1·L_prior + λ2·L_sym + λ3·L_KLD` and its terms.
pub fn total_loss(
    g: &mut Graph<'_>,
    out: &BranchOutputs,
    x: &Tensor,
    b: usize,
    t: usize,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(Var, LossBreakdown)> {
    let mut br = LossBreakdown::default();
    let direct = g.bce_sum(out.x_direct, x.clone())?;
    br.rec_direct = g.value(direct).item() as f64;
    let mut rec = direct;
    let beta_vae = model.variant == Variant::BetaVae;
    let mut extra: Vec<Var> = Vec::new();

    if !beta_vae {
        if let (Some(x_pred), Some(z_hat), Some(z_next)) = (out.x_pred, out.z_hat, out.z_next) {
            let target = next_step_targets(x, b, t)?;
            let pred = g.bce_sum(x_pred, target.clone())?;
            br.rec_pred = g.value(pred).item() as f64;
            rec = g.add(rec, pred)?;

            let prior = g.mse_sum(z_hat, z_next)?;
            br.prior = g.value(prior).item() as f64;
            let wp = g.scale(prior, cfg.lambda1 as f32);
            br.weighted_prior = g.value(wp).item() as f64;
            extra.push(wp);

            let k = out.x_sym.len();
            if k > 0 {
                let inv_k = 1.0 / k as f32;
                let mut rec_terms = Vec::with_capacity(k);
                let mut sym_terms = Vec::with_capacity(k);
                for (&xs, &zt) in out.x_sym.iter().zip(&out.z_tilde) {
                    rec_terms.push(g.bce_sum(xs, target.clone())?);
                    let a = g.mse_sum(zt, z_hat)?;
                    let c = g.mse_sum(zt, z_next)?;
                    sym_terms.push(g.add(a, c)?);
                }
                let rec_sym = sum_scaled(g, &rec_terms, inv_k)?;
                br.rec_sym = g.value(rec_sym).item() as f64;
                rec = g.add(rec, rec_sym)?;
                let sym = sum_scaled(g, &sym_terms, inv_k)?;
                br.sym = g.value(sym).item() as f64;
                let ws = g.scale(sym, cfg.lambda2 as f32);
                br.weighted_sym = g.value(ws).item() as f64;
                extra.push(ws);
            }
        }
    }
    br.rec = g.value(rec).item() as f64;
    if let Some(lv) = out.posterior.logvar {
        let kld = g.kld_sum(out.posterior.mean, lv)?;
        br.kld = g.value(kld).item() as f64;
        let wk = g.scale(kld, cfg.lambda3 as f32);
        br.weighted_kld = g.value(wk).item() as f64;
        extra.push(wk);
    }
    let mut total = rec;
    for v in extra {
        total = g.add(total, v)?;
    }
    br.total = g.value(total).item() as f64;
    Ok((total, br))
}

fn sum_scaled(g: &mut Graph<'_>, terms: &[Var], s: f32) -> Result<Var> {
    let mut acc = terms[0];
    for &v in &terms[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(g.scale(acc, s))
}

/// Stacks sequences `idx` of `seqs` into `[B·T, C, H, W]`.
pub fn batch_tensor(data: &SeqData, seqs: &[&crate::data::Sequence]) -> Result<Tensor> {
    let [c, h, w] = data.obs_shape;
    let mut buf = Vec::with_capacity(seqs.len() * data.seq_len * data.frame_len());
    for s in seqs {
        buf.extend_from_slice(&s.frames);
    }
    Ok(Tensor::new(&[seqs.len() * data.seq_len, c, h, w], buf)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: u64,
    #[serde(rename = "L_total")]
    pub total: f64,
    #[serde(rename = "L_rec")]
    pub rec: f64,
    #[serde(rename = "L_prior")]
    pub prior: f64,
    #[serde(rename = "L_sym")]
    pub sym: f64,
    #[serde(rename = "L_KLD")]
    pub kld: f64,
    pub tf_prob: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogRow>,
    pub group_samples: u64,
}

pub const LOG_FILE: &str = "train_log.csv";

/// Model-init seed for a run seed.
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, "init", 0)
}

/// Trains from scratch. With `out`, writes the CSV log, checkpoints and the
/// final model there. `progress` sees every logged row.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &SeqData,
    out: Option<&Path>,
    progress: &mut dyn FnMut(&LogRow),
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    cfg.validate(model_cfg)?;
    if data.task != model_cfg.task || data.obs_shape != model_cfg.obs_shape {
        return Err(CoreError::Config(format!(
            "dataset is {} {:?}, model expects {} {:?}",
            data.task.name(),
            data.obs_shape,
            model_cfg.task.name(),
            model_cfg.obs_shape
        )));
    }
    if data.train.is_empty() {
        return Err(CoreError::Config("dataset has no training sequences".into()));
    }
    if data.seq_len < 2 || (model_cfg.has_prior() && data.seq_len <= cfg.context) {
        return Err(CoreError::Config(format!(
            "sequences of {} frames leave nothing to predict after {} context frames",
            data.seq_len, cfg.context
        )));
    }
    let mut model = Model::new(model_cfg.clone(), init_seed(cfg.seed))?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr as f32,
        ..AdamConfig::default()
    });
    let mut rng: ChaCha8Rng = rng_for(cfg.seed, "train", 0);
    let mut sampler = GroupSampler::new(cfg.group.clone());
    let mut writer = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            Some((
                csv::Writer::from_path(&path).map_err(|e| CoreError::format(&path, e.to_string()))?,
                path,
            ))
        }
        None => None,
    };
    let (b, t) = (cfg.batch_size, data.seq_len);
    let mut log = Vec::new();
    let pool: Vec<&crate::data::Sequence> = data.train.iter().collect();
    for iter in 0..cfg.iterations {
        let tf = teacher_forcing_prob(iter, cfg.tf_decay_iterations);
        let seqs: Vec<&crate::data::Sequence> = (0..b).map(|_| *pool.choose(&mut rng).unwrap()).collect();
        let x = batch_tensor(data, &seqs)?;
        let draws = Draws::sample(model_cfg, cfg, b, t, tf, &mut sampler, &mut rng);
        let (grads, br) = {
            let mut g = Graph::new(&model.params);
            let prior = model.prior().map(|p| p as &dyn Prior);
            let outs = forward_three_branch(&mut g, &model, prior, x.clone(), b, t, &draws)?;
            let (loss, br) = total_loss(&mut g, &outs, &x, b, t, model_cfg, cfg)?;
            if !br.is_finite() {
                return Err(CoreError::NonFinite(format!("loss at iteration {iter}: {br:?}")));
            }
            (g.backward(loss)?.into_param_grads(), br)
        };
        adam.step(&mut model.params, &grads).map_err(|e| match e {
            sps_autodiff::Error::NonFiniteGradient(p) => {
                CoreError::NonFinite(format!("gradient of `{p}` at iteration {iter}; losses {br:?}"))
            }
            other => other.into(),
        })?;
        if iter % cfg.log_every == 0 || iter + 1 == cfg.iterations {
            let row = LogRow {
                iter,
                total: br.total,
                rec: br.rec,
                prior: br.prior,
                sym: br.sym,
                kld: br.kld,
                tf_prob: tf,
            };
            if let Some((w, path)) = writer.as_mut() {
                w.serialize(row).map_err(|e| CoreError::format(path, e.to_string()))?;
                w.flush().map_err(|e| CoreError::io(path, e))?;
            }
            progress(&row);
            log.push(row);
        }
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0 && iter + 1 < cfg.iterations {
                model.save(&dir.join(format!("checkpoint_{:06}", iter + 1)), iter + 1)?;
            }
        }
    }
    if let Some(dir) = out {
        model.save(dir, cfg.iterations)?;
    }
    Ok(TrainOutcome {
        model,
        log,
        group_samples: sampler.calls(),
    })
}
