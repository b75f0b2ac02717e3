//! Bouncing-ball world: physics, camera, renderer and datasets.

pub mod camera;
pub mod dataset;
pub mod physics;
pub mod render;

pub use camera::{Camera, Projection};
pub use dataset::{
    make_dataset, simulate_trajectory, Trajectory, TrajectoryHeader, VisionDataset,
    VisionManifest,
};
pub use physics::{step, BallState, SimConfig};
pub use render::{render, RenderConfig};
