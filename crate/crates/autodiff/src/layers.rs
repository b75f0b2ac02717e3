//! Parameterized layers. Each layer registers its tensors in a [`ParamSet`]
//! at construction and reads them back through a [`Graph`] on every forward.

use rand::Rng;

use crate::conv::Conv2dSpec;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Uniform `[-1/√fan_in, 1/√fan_in]` initialization.
pub fn fan_in_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = params.insert(
            format!("{name}.weight"),
            fan_in_uniform(&[out_features, in_features], in_features, rng),
        );
        let bias = bias.then(|| {
            params.insert(
                format!("{name}.bias"),
                fan_in_uniform(&[out_features], in_features, rng),
            )
        });
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = self.bias.map(|b| g.param(b));
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        spec: Conv2dSpec,
        rng: &mut R,
    ) -> Self {
        let (kh, kw) = spec.kernel;
        let fan_in = in_channels * kh * kw;
        let weight = params.insert(
            format!("{name}.weight"),
            fan_in_uniform(&[out_channels, in_channels, kh, kw], fan_in, rng),
        );
        let bias = params.insert(
            format!("{name}.bias"),
            fan_in_uniform(&[out_channels], fan_in, rng),
        );
        Self {
            weight,
            bias,
            spec,
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, Some(b), self.spec)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: Conv2dSpec,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        spec: Conv2dSpec,
        rng: &mut R,
    ) -> Self {
        let (kh, kw) = spec.kernel;
        let fan_in = out_channels * kh * kw;
        let weight = params.insert(
            format!("{name}.weight"),
            fan_in_uniform(&[in_channels, out_channels, kh, kw], fan_in, rng),
        );
        let bias = params.insert(
            format!("{name}.bias"),
            fan_in_uniform(&[out_channels], fan_in, rng),
        );
        Self {
            weight,
            bias,
            spec,
            in_channels,
            out_channels,
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv_transpose2d(x, w, Some(b), self.spec)
    }
}

/// Elman cell: `h = tanh(W_x·x + W_h·h_prev + b)`.
#[derive(Debug, Clone)]
pub struct RnnCell {
    pub input: ParamId,
    pub hidden: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl RnnCell {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let input = params.insert(
            format!("{name}.weight_ih"),
            fan_in_uniform(&[hidden_size, input_size], hidden_size, rng),
        );
        let hidden = params.insert(
            format!("{name}.weight_hh"),
            fan_in_uniform(&[hidden_size, hidden_size], hidden_size, rng),
        );
        let bias = params.insert(
            format!("{name}.bias"),
            fan_in_uniform(&[hidden_size], hidden_size, rng),
        );
        Self {
            input,
            hidden,
            bias,
            input_size,
            hidden_size,
        }
    }

    /// One step for a batch: `x [B, D]`, `h_prev [B, H]` (or zeros when
    /// `None`) to `h [B, H]`.
    pub fn step(&self, g: &mut Graph<'_>, x: Var, h_prev: Option<Var>) -> Result<Var> {
        let wx = g.param(self.input);
        let b = g.param(self.bias);
        let mut pre = g.linear(x, wx, Some(b))?;
        if let Some(h) = h_prev {
            let wh = g.param(self.hidden);
            let rec = g.linear(h, wh, None)?;
            pre = g.add(pre, rec)?;
        }
        Ok(g.tanh(pre))
    }
}
