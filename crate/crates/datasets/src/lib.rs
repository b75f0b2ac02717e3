//! Synthetic datasets: rendered bouncing-ball videos and additive-synthesis
//! scale clips with their spectrogram and pitch tooling.

pub mod audio;
pub mod blob;
mod error;
pub mod image;
pub mod seed;
pub mod world;

pub use error::{DataError, Result};
pub use image::Image;
