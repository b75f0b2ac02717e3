//! Ball kinematics: uniform horizontal motion, ballistic vertical motion with
//! analytic ground bounces.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::camera::Camera;
use crate::error::{DataError, Result};

/// Position and velocity in meters and m/s, `y` up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub gravity: f64,
    /// Fraction of kinetic energy lost per bounce.
    pub energy_loss: f64,
    pub radius: f64,
    pub spawn_x: [f64; 2],
    pub spawn_y: [f64; 2],
    pub spawn_z: [f64; 2],
    pub spawn_horizontal_speed: [f64; 2],
    pub spawn_vertical_speed: [f64; 2],
    pub frames: usize,
    pub duration: f64,
    pub camera: Camera,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            energy_loss: 0.36,
            radius: 0.5,
            spawn_x: [-2.0, 2.0],
            spawn_y: [1.0, 4.0],
            spawn_z: [3.0, 7.0],
            spawn_horizontal_speed: [-1.5, 1.5],
            spawn_vertical_speed: [-1.0, 3.0],
            frames: 20,
            duration: 4.0,
            camera: Camera::default(),
        }
    }
}

/// Below this rebound speed the ball is put to rest on the ground.
const REST_SPEED: f64 = 1e-6;
const MAX_BOUNCES_PER_STEP: usize = 10_000;

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.energy_loss) {
            return Err(DataError::Config(format!(
                "energy_loss must lie in [0, 1), got {}",
                self.energy_loss
            )));
        }
        if self.gravity <= 0.0 || self.radius <= 0.0 {
            return Err(DataError::Config("gravity and radius must be positive".into()));
        }
        if self.frames == 0 || self.duration <= 0.0 {
            return Err(DataError::Config("frames and duration must be positive".into()));
        }
        if self.spawn_y[0] < self.radius {
            return Err(DataError::Config("spawn height below ball radius".into()));
        }
        self.camera.validate()
    }

    pub fn dt(&self) -> f64 {
        self.duration / self.frames as f64
    }

    /// Rebound speed factor `√(1−ρ)`.
    pub fn restitution(&self) -> f64 {
        (1.0 - self.energy_loss).sqrt()
    }
}

/// Advances `state` by `dt` seconds.
pub fn step(state: &BallState, dt: f64, cfg: &SimConfig) -> BallState {
    assert!(dt > 0.0, "step needs dt > 0, got {dt}");
    let [x, y, z] = state.position;
    let [vx, mut vy, vz] = state.velocity;
    let g = cfg.gravity;
    let r = cfg.radius;
    let mut h = (y - r).max(0.0);
    let mut left = dt;
    for _ in 0..MAX_BOUNCES_PER_STEP {
        if h == 0.0 && vy == 0.0 {
            break;
        }
        // Time until the bottom of the ball touches the ground.
        let contact = (vy + (vy * vy + 2.0 * g * h).sqrt()) / g;
        if contact >= left {
            h = (h + vy * left - 0.5 * g * left * left).max(0.0);
            vy -= g * left;
            left = 0.0;
            break;
        }
        let impact = vy - g * contact;
        left -= contact;
        h = 0.0;
        vy = cfg.restitution() * impact.abs();
        if vy < REST_SPEED {
            vy = 0.0;
        }
    }
    if left > 0.0 {
        h = 0.0;
        vy = 0.0;
    }
    BallState {
        position: [x + vx * dt, r + h, z + vz * dt],
        velocity: [vx, vy, vz],
    }
}

/// Draws an initial state from the spawn ranges.
pub fn sample_spawn<R: Rng>(cfg: &SimConfig, rng: &mut R) -> BallState {
    let u = |rng: &mut R, [lo, hi]: [f64; 2]| if hi > lo { rng.random_range(lo..hi) } else { lo };
    let position = [u(rng, cfg.spawn_x), u(rng, cfg.spawn_y), u(rng, cfg.spawn_z)];
    let velocity = [
        u(rng, cfg.spawn_horizontal_speed),
        u(rng, cfg.spawn_vertical_speed),
        u(rng, cfg.spawn_horizontal_speed),
    ];
    BallState { position, velocity }
}

/// Runs `frames` states starting from `start`, one per `dt`.
pub fn roll_out(start: BallState, cfg: &SimConfig) -> Vec<BallState> {
    let dt = cfg.dt();
    let mut states = Vec::with_capacity(cfg.frames);
    let mut s = start;
    for i in 0..cfg.frames {
        if i > 0 {
            s = step(&s, dt, cfg);
        }
        states.push(s);
    }
    states
}

pub const MAX_SPAWN_ATTEMPTS: usize = 100;

/// Samples spawns until every frame keeps the ball fully in view.
pub fn simulate_states<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<Vec<BallState>> {
    for _ in 0..MAX_SPAWN_ATTEMPTS {
        let states = roll_out(sample_spawn(cfg, rng), cfg);
        if states
            .iter()
            .all(|s| cfg.camera.fully_visible(s.position, cfg.radius))
        {
            return Ok(states);
        }
    }
    Err(DataError::Spawn(MAX_SPAWN_ATTEMPTS))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg_with(g: f64, rho: f64) -> SimConfig {
        SimConfig {
            gravity: g,
            energy_loss: rho,
            ..SimConfig::default()
        }
    }

    #[test]
    fn drop_reaches_ground_exactly() {
        let cfg = cfg_with(10.0, 0.36);
        let r = cfg.radius;
        let s = BallState {
            position: [0.0, 5.0 + r, 4.0],
            velocity: [0.0; 3],
        };
        let out = step(&s, 1.0, &cfg);
        assert!((out.position[1] - r).abs() < 1e-12);
        // Contact happens exactly at the end of the step, before any bounce.
        assert!((out.velocity[1] + 10.0).abs() < 1e-9);
    }

    #[test]
    fn bounce_scales_speed_by_point_eight() {
        let cfg = cfg_with(9.8, 0.36);
        let r = cfg.radius;
        let h0: f64 = 2.0;
        let s = BallState {
            position: [0.0, r + h0, 4.0],
            velocity: [0.0; 3],
        };
        let t_contact = (2.0 * h0 / 9.8).sqrt();
        let out = step(&s, t_contact + 1e-9, &cfg);
        let impact = 9.8 * t_contact;
        assert!((out.velocity[1] - 0.8 * impact).abs() < 1e-6);
    }

    #[test]
    fn horizontal_motion_is_uniform() {
        let cfg = SimConfig::default();
        let s = BallState {
            position: [0.3, 2.0, 5.0],
            velocity: [1.2, -0.5, -0.7],
        };
        let mut cur = s;
        for _ in 0..50 {
            cur = step(&cur, 0.2, &cfg);
            assert_eq!(cur.velocity[0], 1.2);
            assert_eq!(cur.velocity[2], -0.7);
            assert!(cur.position[1] >= cfg.radius);
        }
        assert!((cur.position[0] - (0.3 + 1.2 * 10.0)).abs() < 1e-9);
    }

    #[test]
    fn ball_comes_to_rest() {
        let cfg = SimConfig::default();
        let s = BallState {
            position: [0.0, 3.0, 5.0],
            velocity: [0.0; 3],
        };
        let out = step(&s, 100.0, &cfg);
        assert_eq!(out.position[1], cfg.radius);
        assert_eq!(out.velocity[1], 0.0);
    }
}
