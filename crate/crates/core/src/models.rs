//! Frame encoder, mirrored decoder and recurrent latent prior.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sps_autodiff::checkpoint::{load_params, restore_into, save_params};
use sps_autodiff::layers::{Conv2d, ConvTranspose2d, Linear, RnnCell};
use sps_autodiff::{Conv2dSpec, Graph, ParamSet, Tensor, Var};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Audio,
    Vision,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Audio => "audio",
            Task::Vision => "vision",
        }
    }

    pub fn obs_shape(self) -> [usize; 3] {
        match self {
            Task::Audio => [1, 64, 16],
            Task::Vision => [3, 32, 32],
        }
    }

    /// Frames given to the prior before it rolls out on its own.
    pub fn context(self) -> usize {
        match self {
            Task::Audio => 3,
            Task::Vision => 5,
        }
    }

    pub fn content_dim(self) -> usize {
        match self {
            Task::Audio => 1,
            Task::Vision => 3,
        }
    }

    /// Encoder convolutions; the decoder runs them transposed in reverse.
    pub fn conv_plan(self) -> Vec<Conv2dSpec> {
        let tall = Conv2dSpec {
            kernel: (4, 3),
            stride: (2, 1),
            pad: (1, 1),
        };
        match self {
            Task::Audio => vec![Conv2dSpec::square(4, 2, 1), tall, tall],
            Task::Vision => vec![
                Conv2dSpec::square(4, 2, 1),
                Conv2dSpec::square(4, 2, 1),
                Conv2dSpec::square(3, 1, 1),
                Conv2dSpec::square(3, 1, 1),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Sps,
    SpsPlus,
    BetaVae,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Sps => "sps",
            Variant::SpsPlus => "sps_plus",
            Variant::BetaVae => "beta_vae",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vae,
    Ae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    pub variant: Variant,
    pub mode: Mode,
    pub obs_shape: [usize; 3],
    pub content_dim: usize,
    pub style_dim: usize,
    /// Output channels of each encoder convolution.
    pub conv_channels: Vec<usize>,
    /// Hidden widths of the decoder's fully-connected stack.
    pub fc_hidden: Vec<usize>,
    pub rnn_hidden: usize,
}

impl ModelConfig {
    pub fn new(task: Task, variant: Variant, mode: Mode) -> Self {
        let (conv_channels, fc_hidden) = match task {
            Task::Audio => (vec![16, 32, 64], vec![64, 256]),
            Task::Vision => (vec![16, 32, 64, 128], vec![64, 128, 256]),
        };
        Self {
            task,
            variant,
            mode,
            obs_shape: task.obs_shape(),
            content_dim: task.content_dim(),
            style_dim: if variant == Variant::SpsPlus { 2 } else { 0 },
            conv_channels,
            fc_hidden,
            rnn_hidden: 256,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.content_dim + self.style_dim
    }

    pub fn has_prior(&self) -> bool {
        self.variant != Variant::BetaVae
    }

    pub fn obs_len(&self) -> usize {
        self.obs_shape.iter().product()
    }

    /// Spatial shape `[C, H, W]` after the encoder convolutions.
    pub fn map_shape(&self) -> Result<[usize; 3]> {
        let [_, mut h, mut w] = self.obs_shape;
        for spec in self.task.conv_plan() {
            h = Conv2dSpec::conv_out(h, spec.kernel.0, spec.stride.0, spec.pad.0)
                .filter(|&v| v > 0)
                .ok_or_else(|| CoreError::Config(format!("observation {:?} too small", self.obs_shape)))?;
            w = Conv2dSpec::conv_out(w, spec.kernel.1, spec.stride.1, spec.pad.1)
                .filter(|&v| v > 0)
                .ok_or_else(|| CoreError::Config(format!("observation {:?} too small", self.obs_shape)))?;
        }
        Ok([*self.conv_channels.last().unwrap_or(&0), h, w])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        let plan = self.task.conv_plan();
        if self.conv_channels.len() != plan.len() {
            return bad(format!(
                "model.conv_channels: {} task uses {} convolutions, got {} widths",
                self.task.name(),
                plan.len(),
                self.conv_channels.len()
            ));
        }
        if self.conv_channels.contains(&0) || self.fc_hidden.contains(&0) {
            return bad("model: layer widths must be positive".into());
        }
        if self.content_dim == 0 {
            return bad("model.content_dim must be at least 1".into());
        }
        if self.obs_shape.contains(&0) {
            return bad("model.obs_shape extents must be positive".into());
        }
        match self.variant {
            Variant::SpsPlus if self.style_dim == 0 => {
                return bad("model.style_dim: sps_plus needs a style part".into())
            }
            Variant::Sps | Variant::BetaVae if self.style_dim != 0 => {
                return bad(format!(
                    "model.style_dim: only sps_plus pools a style part (variant {})",
                    self.variant.name()
                ))
            }
            _ => {}
        }
        if self.has_prior() && self.rnn_hidden == 0 {
            return bad("model.rnn_hidden must be positive".into());
        }
        if self.variant == Variant::BetaVae && self.mode == Mode::Ae {
            return bad("model.mode: beta_vae is variational".into());
        }
        let [c, h, w] = self.map_shape()?;
        if (c, h, w) != (self.conv_channels[plan.len() - 1], 8, 8) {
            return bad(format!("encoder ends at {h}x{w}, expected 8x8"));
        }
        Ok(())
    }
}

/// One step of a latent prior: `(prediction, state)` from the current input
/// and the previous state.
pub trait Prior {
    fn step(&self, g: &mut Graph<'_>, x: Var, h: Option<Var>) -> Result<(Var, Var)>;
}

/// Elman RNN followed by a linear projection back to the content dims.
#[derive(Debug, Clone)]
pub struct RnnPrior {
    pub cell: RnnCell,
    pub head: Linear,
}

impl Prior for RnnPrior {
    fn step(&self, g: &mut Graph<'_>, x: Var, h: Option<Var>) -> Result<(Var, Var)> {
        let h = self.cell.step(g, x, h)?;
        let pred = self.head.forward(g, h)?;
        Ok((pred, h))
    }
}

/// Feeds `inputs[0..]` (each `[B, d]`) through the prior. From step 1 on,
/// row `b` of the input comes from the data where `masks[t - 1][b]` holds and
/// from the previous prediction otherwise. Returns the `T - 1` predictions of
/// steps `2..=T`.
pub fn rollout_teacher(
    g: &mut Graph<'_>,
    prior: &dyn Prior,
    inputs: &[Var],
    masks: &[Vec<bool>],
) -> Result<Vec<Var>> {
    let t = inputs.len();
    if t < 2 || masks.len() + 2 < t {
        return Err(CoreError::Contract(format!(
            "rollout over {t} steps with {} masks",
            masks.len()
        )));
    }
    let mut preds = Vec::with_capacity(t - 1);
    let mut h = None;
    let mut x = inputs[0];
    for step in 0..t - 1 {
        let (pred, state) = prior.step(g, x, h)?;
        preds.push(pred);
        h = Some(state);
        if step + 1 < t - 1 {
            let mask = &masks[step];
            x = if mask.iter().all(|&m| m) {
                inputs[step + 1]
            } else if mask.iter().all(|&m| !m) {
                pred
            } else {
                g.select_rows(inputs[step + 1], pred, mask.clone())?
            };
        }
    }
    Ok(preds)
}

/// Posterior statistics of a batch of frames; `logvar` is absent in AE mode.
#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub mean: Var,
    pub logvar: Option<Var>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub kind: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub iterations: u64,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CARD_FILE: &str = "model.json";
const CARD_KIND: &str = "sps-model";

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub seed: u64,
    encoder: Vec<Conv2d>,
    head_mean: Linear,
    head_logvar: Option<Linear>,
    decoder_fc: Vec<Linear>,
    decoder: Vec<ConvTranspose2d>,
    prior: Option<RnnPrior>,
    map: [usize; 3],
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let plan = config.task.conv_plan();
        let map = config.map_shape()?;
        let map_len = map.iter().product();
        let d = config.latent_dim();

        let mut encoder = Vec::new();
        let mut cin = config.obs_shape[0];
        for (i, (&cout, &spec)) in config.conv_channels.iter().zip(&plan).enumerate() {
            encoder.push(Conv2d::new(&mut params, &format!("enc.conv{i}"), cin, cout, spec, &mut rng));
            cin = cout;
        }
        let head_mean = Linear::new(&mut params, "enc.mean", map_len, d, true, &mut rng);
        let head_logvar = (config.mode == Mode::Vae)
            .then(|| Linear::new(&mut params, "enc.logvar", map_len, d, true, &mut rng));

        let mut decoder_fc = Vec::new();
        let mut width = d;
        for (i, &h) in config.fc_hidden.iter().chain(std::iter::once(&map_len)).enumerate() {
            decoder_fc.push(Linear::new(&mut params, &format!("dec.fc{i}"), width, h, true, &mut rng));
            width = h;
        }
        let mut decoder = Vec::new();
        let n = plan.len();
        for i in (0..n).rev() {
            let cin = config.conv_channels[i];
            let cout = if i == 0 { config.obs_shape[0] } else { config.conv_channels[i - 1] };
            decoder.push(ConvTranspose2d::new(
                &mut params,
                &format!("dec.deconv{}", n - 1 - i),
                cin,
                cout,
                plan[i],
                &mut rng,
            ));
        }
        let prior = config.has_prior().then(|| {
            let dc = config.content_dim;
            RnnPrior {
                cell: RnnCell::new(&mut params, "prior.rnn", dc, config.rnn_hidden, &mut rng),
                head: Linear::new(&mut params, "prior.head", config.rnn_hidden, dc, true, &mut rng),
            }
        });
        Ok(Self {
            config,
            params,
            seed,
            encoder,
            head_mean,
            head_logvar,
            decoder_fc,
            decoder,
            prior,
            map,
        })
    }

    pub fn prior(&self) -> Option<&RnnPrior> {
        self.prior.as_ref()
    }

    /// Per-frame posterior for `x [N, C, H, W]`.
    pub fn encode(&self, g: &mut Graph<'_>, x: Var) -> Result<Posterior> {
        let n = g.value(x).dim(0);
        let mut h = x;
        for conv in &self.encoder {
            let y = conv.forward(g, h)?;
            h = g.relu(y);
        }
        let flat = g.reshape(h, &[n, self.map.iter().product()])?;
        let mean = self.head_mean.forward(g, flat)?;
        let logvar = match &self.head_logvar {
            Some(l) => Some(l.forward(g, flat)?),
            None => None,
        };
        Ok(Posterior { mean, logvar })
    }

    /// Reparameterized sample `μ + e^(logvar/2)·ε`; the mean when `eps` is
    /// `None` or in AE mode.
    pub fn sample(&self, g: &mut Graph<'_>, post: Posterior, eps: Option<Tensor>) -> Result<Var> {
        match (post.logvar, eps) {
            (Some(lv), Some(eps)) => {
                let half = g.scale(lv, 0.5);
                let std = g.exp(half);
                let noise = g.mul_const(std, eps)?;
                Ok(g.add(post.mean, noise)?)
            }
            _ => Ok(post.mean),
        }
    }

    /// `z [N, d]` to observations in `(0, 1)`, `[N, C, H, W]`.
    pub fn decode(&self, g: &mut Graph<'_>, z: Var) -> Result<Var> {
        let n = g.value(z).dim(0);
        let mut h = z;
        for fc in &self.decoder_fc {
            let y = fc.forward(g, h)?;
            h = g.relu(y);
        }
        h = g.reshape(h, &[n, self.map[0], self.map[1], self.map[2]])?;
        let last = self.decoder.len() - 1;
        for (i, deconv) in self.decoder.iter().enumerate() {
            let y = deconv.forward(g, h)?;
            h = if i == last { g.sigmoid(y) } else { g.relu(y) };
        }
        Ok(h)
    }

    fn check_frames(&self, frames: &[f32]) -> Result<usize> {
        let len = self.config.obs_len();
        if frames.is_empty() || frames.len() % len != 0 {
            return Err(CoreError::Contract(format!(
                "{} values is not a whole number of {:?} frames",
                frames.len(),
                self.config.obs_shape
            )));
        }
        Ok(frames.len() / len)
    }

    /// Posterior means (the latent itself in AE mode) of a stack of frames,
    /// `[N, latent_dim]`.
    pub fn encode_frames(&self, frames: &[f32]) -> Result<Vec<f32>> {
        let n = self.check_frames(frames)?;
        let len = self.config.obs_len();
        let [c, hh, ww] = self.config.obs_shape;
        let mut out = Vec::with_capacity(n * self.config.latent_dim());
        for chunk in frames.chunks(INFERENCE_CHUNK * len) {
            let m = chunk.len() / len;
            let mut g = Graph::new(&self.params);
            let x = g.constant(Tensor::new(&[m, c, hh, ww], chunk.to_vec())?);
            let post = self.encode(&mut g, x)?;
            out.extend_from_slice(g.value(post.mean).data());
        }
        Ok(out)
    }

    /// Decoded frames for latents `[N, latent_dim]`.
    pub fn decode_latents(&self, z: &[f32]) -> Result<Vec<f32>> {
        let d = self.config.latent_dim();
        if z.is_empty() || z.len() % d != 0 {
            return Err(CoreError::Contract(format!("{} values is not [N, {d}]", z.len())));
        }
        let mut out = Vec::with_capacity(z.len() / d * self.config.obs_len());
        for chunk in z.chunks(INFERENCE_CHUNK * d) {
            let mut g = Graph::new(&self.params);
            let zv = g.constant(Tensor::new(&[chunk.len() / d, d], chunk.to_vec())?);
            let x = self.decode(&mut g, zv)?;
            out.extend_from_slice(g.value(x).data());
        }
        Ok(out)
    }

    /// Teacher-forced on `ctx [B, n, d_c]`, then autoregressive for `horizon`
    /// steps; returns `[B, horizon, d_c]`.
    pub fn rollout(&self, ctx: &[f32], n: usize, horizon: usize) -> Result<Vec<f32>> {
        let prior = self
            .prior
            .as_ref()
            .ok_or_else(|| CoreError::Contract(format!("{} has no prior", self.config.variant.name())))?;
        rollout_values(prior, &self.params, ctx, n, self.config.content_dim, horizon)
    }

    /// Teacher-forced one-step predictions for content sequences
    /// `[B, T, d_c]`; returns `[B, T - 1, d_c]`.
    pub fn predict_next(&self, seq: &[f32], t: usize) -> Result<Vec<f32>> {
        let prior = self
            .prior
            .as_ref()
            .ok_or_else(|| CoreError::Contract(format!("{} has no prior", self.config.variant.name())))?;
        teacher_forced_values(prior, &self.params, seq, t, self.config.content_dim)
    }

    pub fn card(&self, iterations: u64) -> ModelCard {
        ModelCard {
            kind: CARD_KIND.into(),
            config: self.config.clone(),
            seed: self.seed,
            iterations,
        }
    }

    pub fn save(&self, dir: &Path, iterations: u64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        save_params(&self.params, &dir.join(CHECKPOINT_FILE))?;
        crate::io::write_json(&dir.join(CARD_FILE), &self.card(iterations))
    }

    pub fn load(dir: &Path) -> Result<(Self, ModelCard)> {
        let card: ModelCard = crate::io::read_json(&dir.join(CARD_FILE))?;
        if card.kind != CARD_KIND {
            return Err(CoreError::format(&dir.join(CARD_FILE), format!("not a model card: `{}`", card.kind)));
        }
        let mut model = Model::new(card.config.clone(), card.seed)?;
        let loaded = load_params(&dir.join(CHECKPOINT_FILE))?;
        restore_into(&mut model.params, &loaded)?;
        Ok((model, card))
    }
}

const INFERENCE_CHUNK: usize = 256;

/// Value-level rollout shared by the model and by hand-built priors.
pub fn rollout_values(
    prior: &dyn Prior,
    params: &ParamSet,
    ctx: &[f32],
    n: usize,
    d: usize,
    horizon: usize,
) -> Result<Vec<f32>> {
    if n == 0 || d == 0 || ctx.len() % (n * d) != 0 || ctx.is_empty() {
        return Err(CoreError::Contract(format!("context of {} values is not [B, {n}, {d}]", ctx.len())));
    }
    let b = ctx.len() / (n * d);
    if horizon == 0 {
        return Ok(Vec::new());
    }
    let mut g = Graph::new(params);
    let mut h = None;
    let mut last = None;
    for t in 0..n {
        let rows: Vec<f32> = (0..b)
            .flat_map(|i| ctx[(i * n + t) * d..(i * n + t + 1) * d].iter().copied())
            .collect();
        let x = g.constant(Tensor::new(&[b, d], rows)?);
        let (pred, state) = prior.step(&mut g, x, h)?;
        h = Some(state);
        last = Some(pred);
    }
    let mut steps = Vec::with_capacity(horizon);
    let mut pred = last.expect("n >= 1");
    steps.push(pred);
    for _ in 1..horizon {
        let (p, state) = prior.step(&mut g, pred, h)?;
        h = Some(state);
        pred = p;
        steps.push(pred);
    }
    let mut out = vec![0f32; b * horizon * d];
    for (t, &v) in steps.iter().enumerate() {
        let vals = g.value(v).data();
        for i in 0..b {
            out[(i * horizon + t) * d..(i * horizon + t + 1) * d].copy_from_slice(&vals[i * d..(i + 1) * d]);
        }
    }
    Ok(out)
}

/// One-step predictions of a fully teacher-forced prior over `seq [B, T, d]`;
/// returns `[B, T - 1, d]` for steps `2..=T`.
pub fn teacher_forced_values(prior: &dyn Prior, params: &ParamSet, seq: &[f32], t: usize, d: usize) -> Result<Vec<f32>> {
    if t < 2 || d == 0 || seq.is_empty() || seq.len() % (t * d) != 0 {
        return Err(CoreError::Contract(format!("sequence of {} values is not [B, {t}, {d}]", seq.len())));
    }
    let b = seq.len() / (t * d);
    let mut g = Graph::new(params);
    let mut inputs = Vec::with_capacity(t);
    for s in 0..t {
        let rows: Vec<f32> = (0..b)
            .flat_map(|i| seq[(i * t + s) * d..(i * t + s + 1) * d].iter().copied())
            .collect();
        inputs.push(g.constant(Tensor::new(&[b, d], rows)?));
    }
    let masks = vec![vec![true; b]; t.saturating_sub(2)];
    let preds = rollout_teacher(&mut g, prior, &inputs, &masks)?;
    let mut out = vec![0f32; b * (t - 1) * d];
    for (s, &v) in preds.iter().enumerate() {
        let vals = g.value(v).data();
        for i in 0..b {
            let at = (i * (t - 1) + s) * d;
            out[at..at + d].copy_from_slice(&vals[i * d..(i + 1) * d]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(task: Task, variant: Variant, mode: Mode) -> ModelConfig {
        let mut c = ModelConfig::new(task, variant, mode);
        c.conv_channels = c.conv_channels.iter().map(|&w| w / 8).collect();
        c.fc_hidden = c.fc_hidden.iter().map(|&w| w / 8).collect();
        c.rnn_hidden = 8;
        c
    }

    #[test]
    fn encoder_reaches_eight_by_eight() {
        for task in [Task::Audio, Task::Vision] {
            let c = ModelConfig::new(task, Variant::Sps, Mode::Vae);
            c.validate().unwrap();
            assert_eq!(&c.map_shape().unwrap()[1..], &[8, 8]);
        }
    }

    #[test]
    fn shapes_and_range() {
        let m = Model::new(small(Task::Vision, Variant::Sps, Mode::Vae), 1).unwrap();
        let frames: Vec<f32> = (0..20 * 3 * 32 * 32).map(|i| (i % 7) as f32 / 7.0).collect();
        let z = m.encode_frames(&frames).unwrap();
        assert_eq!(z.len(), 20 * 3);
        let x = m.decode_latents(&[5.0, -40.0, 0.3]).unwrap();
        assert_eq!(x.len(), 3 * 32 * 32);
        assert!(x.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zero_noise_sample_is_mean() {
        let m = Model::new(small(Task::Audio, Variant::Sps, Mode::Vae), 2).unwrap();
        let mut g = Graph::new(&m.params);
        let x = g.constant(Tensor::full(&[4, 1, 64, 16], 0.3));
        let post = m.encode(&mut g, x).unwrap();
        let z = m.sample(&mut g, post, Some(Tensor::zeros(&[4, 1]))).unwrap();
        assert_eq!(g.value(z).data(), g.value(post.mean).data());
    }

    #[test]
    fn beta_vae_has_no_prior() {
        let m = Model::new(small(Task::Vision, Variant::BetaVae, Mode::Vae), 0).unwrap();
        assert!(m.prior().is_none());
        assert!(m.rollout(&[0.0; 15], 5, 3).is_err());
        assert!(small(Task::Vision, Variant::BetaVae, Mode::Ae).validate().is_err());
        assert!(small(Task::Vision, Variant::SpsPlus, Mode::Vae).validate().is_ok());
    }

    #[test]
    fn zero_prior_predicts_zero() {
        let mut m = Model::new(small(Task::Vision, Variant::Sps, Mode::Ae), 3).unwrap();
        let ids: Vec<_> = m.params.ids().filter(|&id| m.params.name(id).starts_with("prior.")).collect();
        for id in ids {
            m.params.get_mut(id).data_mut().fill(0.0);
        }
        let out = m.rollout(&[0.5; 2 * 5 * 3], 5, 4).unwrap();
        assert_eq!(out.len(), 2 * 4 * 3);
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(m.rollout(&[0.5; 15], 5, 0).unwrap().is_empty());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::new(small(Task::Audio, Variant::SpsPlus, Mode::Vae), 9).unwrap();
        m.save(dir.path(), 12).unwrap();
        let (back, card) = Model::load(dir.path()).unwrap();
        assert_eq!(card.iterations, 12);
        for ((na, a), (nb, b)) in m.params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.data(), b.data());
        }
    }
}
