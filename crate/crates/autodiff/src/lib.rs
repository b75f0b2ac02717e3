//! Minimal reverse-mode differentiation over dense `f32` tensors.
//!
//! Covers exactly what the sequence autoencoders need: linear layers, 2D
//! convolution and transposed convolution (im2col + GEMM), Elman RNN cells,
//! elementwise activations, summed BCE / MSE / Gaussian KL losses, and Adam.

pub mod check;
pub mod checkpoint;
mod conv;
mod error;
mod graph;
pub mod layers;
mod params;
mod tensor;

pub use conv::Conv2dSpec;
pub use error::{Error, Result};
pub use graph::{bce_value, sigmoid, GradStore, Graph, Var, BCE_EPS};
pub use params::{Adam, AdamConfig, Gradients, ParamId, ParamSet};
pub use tensor::Tensor;
