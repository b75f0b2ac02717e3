//! YIN fundamental-frequency estimator. Frames are band-limited upsampled
//! before the difference function so that lags resolve fractions of a sample.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::synth::SAMPLE_RATE;
use crate::error::{DataError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YinConfig {
    pub threshold: f64,
    pub fmin: f64,
    pub fmax: f64,
    pub frame: usize,
    pub hop: usize,
    pub upsample: usize,
}

impl Default for YinConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            fmin: 50.0,
            fmax: 5000.0,
            frame: 2048,
            hop: 512,
            upsample: 4,
        }
    }
}

const SINC_HALF_WIDTH: usize = 16;

/// Windowed-sinc interpolation by an integer factor.
pub fn upsample(x: &[f32], factor: usize) -> Vec<f64> {
    if factor <= 1 {
        return x.iter().map(|&v| v as f64).collect();
    }
    let taps = SINC_HALF_WIDTH as isize;
    let kernel = |t: f64| -> f64 {
        if t == 0.0 {
            return 1.0;
        }
        let pt = std::f64::consts::PI * t;
        let w = 0.5 + 0.5 * (pt / SINC_HALF_WIDTH as f64).cos();
        pt.sin() / pt * w
    };
    let phases: Vec<Vec<f64>> = (0..factor)
        .map(|p| {
            let frac = p as f64 / factor as f64;
            (-taps + 1..=taps).map(|k| kernel(frac - k as f64)).collect()
        })
        .collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n * factor);
    for i in 0..n {
        for (p, ph) in phases.iter().enumerate() {
            if p == 0 {
                out.push(x[i] as f64);
                continue;
            }
            let mut acc = 0.0;
            for (k, &c) in (-taps + 1..=taps).zip(ph) {
                let j = i as isize + k;
                if j >= 0 && (j as usize) < n {
                    acc += c * x[j as usize] as f64;
                }
            }
            out.push(acc);
        }
    }
    out
}

struct Plans {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(w: usize, max_lag: usize) -> Self {
        let n = (w + max_lag + w).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        Self {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }
}

/// `d(τ) = Σ_{j<w} (x_j − x_{j+τ})²` for `τ = 0..=max_lag`.
#[cfg(test)]
fn difference(x: &[f64], w: usize, max_lag: usize) -> Vec<f64> {
    difference_with(x, w, max_lag, &Plans::new(w, max_lag))
}

fn difference_with(x: &[f64], w: usize, max_lag: usize, plans: &Plans) -> Vec<f64> {
    let Plans { n, fwd, inv } = plans;
    let n = *n;
    let mut a: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(if i < w { x[i] } else { 0.0 }, 0.0))
        .collect();
    let mut b: Vec<Complex<f64>> = (0..n)
        .map(|i| Complex::new(if i < w + max_lag { x[i] } else { 0.0 }, 0.0))
        .collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (bv, av) in b.iter_mut().zip(&a) {
        *bv *= av.conj();
    }
    inv.process(&mut b);
    let mut prefix = vec![0.0; w + max_lag + 1];
    for i in 0..w + max_lag {
        prefix[i + 1] = prefix[i] + x[i] * x[i];
    }
    let e0 = prefix[w];
    (0..=max_lag)
        .map(|tau| {
            let cross = b[tau].re / n as f64;
            (e0 + prefix[tau + w] - prefix[tau] - 2.0 * cross).max(0.0)
        })
        .collect()
}

/// Lag search range and integration window, in upsampled samples.
fn geometry(cfg: &YinConfig) -> Option<(usize, usize, usize)> {
    let up = cfg.upsample.max(1);
    let sr = (SAMPLE_RATE as usize * up) as f64;
    let tau_min = ((sr / cfg.fmax).floor() as usize).max(2);
    let tau_max = (sr / cfg.fmin).ceil() as usize;
    let len = cfg.frame * up;
    (len > tau_max + 2).then(|| (tau_min, tau_max, len - tau_max - 2))
}

/// Period estimate in samples for one `cfg.frame`-long frame, or `None` when
/// unvoiced.
pub fn yin_frame(frame: &[f32], cfg: &YinConfig) -> Option<f64> {
    let (_, tau_max, w) = geometry(cfg)?;
    yin_frame_with(frame, cfg, &Plans::new(w, tau_max + 1))
}

fn yin_frame_with(frame: &[f32], cfg: &YinConfig, plans: &Plans) -> Option<f64> {
    let up = cfg.upsample.max(1);
    let (tau_min, tau_max, w) = geometry(cfg)?;
    if frame.len() != cfg.frame {
        return None;
    }
    let x = upsample(frame, up);
    let diff = difference_with(&x, w, tau_max + 1, plans);
    let mut cmnd = vec![1.0; diff.len()];
    let mut running = 0.0;
    for tau in 1..diff.len() {
        running += diff[tau];
        cmnd[tau] = if running > 0.0 {
            diff[tau] * tau as f64 / running
        } else {
            1.0
        };
    }
    let mut tau = tau_min;
    while tau <= tau_max {
        if cmnd[tau] < cfg.threshold {
            while tau < tau_max && cmnd[tau + 1] < cmnd[tau] {
                tau += 1;
            }
            let (a, b, c) = (cmnd[tau - 1], cmnd[tau], cmnd[tau + 1]);
            let denom = a - 2.0 * b + c;
            let offset = if denom.abs() > 1e-12 {
                (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            return Some((tau as f64 + offset) / up as f64);
        }
        tau += 1;
    }
    None
}

/// Median f0 in Hz over the voiced frames; `None` when fewer than half of the
/// frames are voiced.
pub fn detect_pitch_with(samples: &[f32], cfg: &YinConfig) -> Result<Option<f64>> {
    if samples.len() < cfg.frame {
        return Err(DataError::Contract(format!(
            "pitch detection needs {} samples, got {}",
            cfg.frame,
            samples.len()
        )));
    }
    let Some((_, tau_max, w)) = geometry(cfg) else {
        return Err(DataError::Config("YIN frame shorter than the longest lag".into()));
    };
    let plans = Plans::new(w, tau_max + 1);
    let n_frames = (samples.len() - cfg.frame) / cfg.hop + 1;
    let mut f0s: Vec<f64> = (0..n_frames)
        .filter_map(|f| yin_frame_with(&samples[f * cfg.hop..f * cfg.hop + cfg.frame], cfg, &plans))
        .map(|tau| SAMPLE_RATE as f64 / tau)
        .collect();
    if 2 * f0s.len() < n_frames {
        return Ok(None);
    }
    f0s.sort_by(f64::total_cmp);
    let m = f0s.len();
    Ok(Some(if m % 2 == 1 {
        f0s[m / 2]
    } else {
        0.5 * (f0s[m / 2 - 1] + f0s[m / 2])
    }))
}

pub fn detect_pitch(samples: &[f32]) -> Result<Option<f64>> {
    detect_pitch_with(samples, &YinConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (std::f64::consts::TAU * f * i as f64 / SAMPLE_RATE as f64).sin() as f32)
            .collect()
    }

    #[test]
    fn sine_440() {
        let f = detect_pitch(&sine(440.0, 4096)).unwrap().unwrap();
        assert!((f - 440.0).abs() / 440.0 < 0.01, "{f}");
    }

    #[test]
    fn difference_matches_direct_sum() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 13) % 17) as f64 - 8.0).collect();
        let d = difference(&x, 200, 60);
        for tau in [0, 1, 7, 60] {
            let direct: f64 = (0..200).map(|j| (x[j] - x[j + tau]).powi(2)).sum();
            assert!((d[tau] - direct).abs() < 1e-6 * direct.max(1.0));
        }
    }

    #[test]
    fn upsampling_keeps_original_samples() {
        let x = sine(1000.0, 256);
        let y = upsample(&x, 4);
        assert_eq!(y.len(), 1024);
        for i in 0..256 {
            assert_eq!(y[4 * i], x[i] as f64);
        }
        // Interior interpolated points follow the underlying sine.
        for i in 100..150 {
            let t = (i as f64 + 0.5) / SAMPLE_RATE as f64;
            let s = (std::f64::consts::TAU * 1000.0 * t).sin();
            assert!((y[4 * i + 2] - s).abs() < 1e-3);
        }
    }

    #[test]
    fn too_short_is_an_error() {
        assert!(detect_pitch(&[0.0; 100]).is_err());
    }

    #[test]
    fn silence_is_unvoiced() {
        assert_eq!(detect_pitch(&[0.0; 4096]).unwrap(), None);
    }
}
