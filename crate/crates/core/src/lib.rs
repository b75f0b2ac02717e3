//! Symmetry-constrained sequence autoencoders: group actions, models,
//! training and evaluation.

pub mod data;
pub mod config;
pub mod evaluation;
pub mod experiment;
mod error;
pub mod groups;
pub mod io;
pub mod sweep;
pub mod models;
pub mod training;

pub use error::{CoreError, Result};
