//! STFT, log-power spectrogram slices, and Griffin-Lim phase recovery.

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::synth::{note_samples, ScaleClip, NOTES_PER_CLIP};
use crate::error::{DataError, Result};

pub const N_FFT: usize = 1024;
pub const HOP: usize = 512;
pub const N_BINS: usize = N_FFT / 2 + 1;

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|k| (0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / n as f64).cos()) as f32)
        .collect()
}

pub fn frame_count(n_samples: usize) -> usize {
    if n_samples < N_FFT {
        0
    } else {
        (n_samples - N_FFT) / HOP + 1
    }
}

struct Plans {
    forward: Arc<dyn Fft<f32>>,
    inverse: Arc<dyn Fft<f32>>,
    window: Vec<f32>,
}

impl Plans {
    fn new() -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(N_FFT),
            inverse: planner.plan_fft_inverse(N_FFT),
            window: hann(N_FFT),
        }
    }

    fn analyze(&self, samples: &[f32]) -> Vec<Vec<Complex<f32>>> {
        (0..frame_count(samples.len()))
            .map(|f| {
                let mut buf: Vec<Complex<f32>> = samples[f * HOP..f * HOP + N_FFT]
                    .iter()
                    .zip(&self.window)
                    .map(|(&x, &w)| Complex::new(x * w, 0.0))
                    .collect();
                self.forward.process(&mut buf);
                buf.truncate(N_BINS);
                buf
            })
            .collect()
    }

    /// Weighted overlap-add inverse of [`Plans::analyze`].
    fn synthesize(&self, frames: &[Vec<Complex<f32>>]) -> Vec<f32> {
        let n = if frames.is_empty() {
            0
        } else {
            (frames.len() - 1) * HOP + N_FFT
        };
        let mut out = vec![0.0f32; n];
        let mut norm = vec![0.0f32; n];
        for (f, half) in frames.iter().enumerate() {
            let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
            buf[..N_BINS].copy_from_slice(half);
            for k in 1..N_FFT - N_BINS + 1 {
                buf[N_FFT - k] = half[k].conj();
            }
            self.inverse.process(&mut buf);
            for (i, (c, &w)) in buf.iter().zip(&self.window).enumerate() {
                out[f * HOP + i] += c.re / N_FFT as f32 * w;
                norm[f * HOP + i] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *o /= n;
            }
        }
        out
    }
}

/// Complex STFT frames, `N_BINS` bins each, Hann window, no padding.
pub fn stft(samples: &[f32]) -> Vec<Vec<Complex<f32>>> {
    Plans::new().analyze(samples)
}

/// Power spectrogram `[frames][N_BINS]`.
pub fn power_spectrogram(samples: &[f32]) -> Result<Vec<Vec<f32>>> {
    if samples.len() < N_FFT {
        return Err(DataError::Contract(format!(
            "{} samples is shorter than one {N_FFT}-sample window",
            samples.len()
        )));
    }
    Ok(stft(samples)
        .into_iter()
        .map(|f| f.iter().map(|c| c.norm_sqr()).collect())
        .collect())
}

/// Area-weighted resampling of `src` onto `n_out` equal cells.
pub fn resize_area(src: &[f32], n_out: usize) -> Vec<f32> {
    let n_in = src.len();
    if n_out == n_in {
        return src.to_vec();
    }
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut acc = 0.0;
            let mut i = a.floor() as usize;
            while (i as f64) < b && i < n_in {
                let overlap = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
                acc += overlap * src[i] as f64;
                i += 1;
            }
            (acc / scale) as f32
        })
        .collect()
}

/// Linear interpolation of `src` onto `n_out` cell centers.
pub fn resize_linear(src: &[f32], n_out: usize) -> Vec<f32> {
    let n_in = src.len();
    if n_out == n_in {
        return src.to_vec();
    }
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let x = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i = (x.floor() as usize).min(n_in - 1);
            let j = (i + 1).min(n_in - 1);
            let f = x - i as f64;
            ((1.0 - f) * src[i] as f64 + f * src[j] as f64) as f32
        })
        .collect()
}

/// Fifteen log-power slices `[segments, freq_bins, frames]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectroSeq {
    pub segments: usize,
    pub freq_bins: usize,
    pub frames: usize,
    pub data: Vec<f32>,
    /// Per-clip maximum power used for normalization.
    pub max_power: f32,
}

impl SpectroSeq {
    pub fn segment(&self, i: usize) -> &[f32] {
        let n = self.freq_bins * self.frames;
        &self.data[i * n..(i + 1) * n]
    }
}

/// Frames per note segment.
pub fn frames_per_note() -> usize {
    note_samples() / HOP
}

/// `log(1+s)/log(1+s_max)` per clip, sliced at note boundaries. The clip is
/// extended by one hop of silence so each note owns exactly
/// [`frames_per_note`] frames; `freq_bins < N_BINS` resizes by area averaging.
pub fn spectrogram(clip: &ScaleClip, freq_bins: usize) -> Result<SpectroSeq> {
    spectrogram_of(&clip.samples, NOTES_PER_CLIP, freq_bins)
}

pub fn spectrogram_of(samples: &[f32], segments: usize, freq_bins: usize) -> Result<SpectroSeq> {
    if freq_bins == 0 || freq_bins > N_BINS {
        return Err(DataError::Config(format!("freq_bins must lie in 1..={N_BINS}")));
    }
    let mut padded = samples.to_vec();
    padded.extend(std::iter::repeat_n(0.0, HOP));
    let power = power_spectrogram(&padded)?;
    let per = power.len() / segments;
    if per == 0 {
        return Err(DataError::Contract("clip too short for its segment count".into()));
    }
    let max_power = power.iter().flatten().fold(0.0f32, |m, &v| m.max(v));
    let denom = (max_power as f64).ln_1p();
    let mut data = vec![0.0f32; segments * freq_bins * per];
    for s in 0..segments {
        for t in 0..per {
            let frame = &power[s * per + t];
            let logged: Vec<f32> = frame
                .iter()
                .map(|&p| {
                    if denom > 0.0 {
                        ((p as f64).ln_1p() / denom).clamp(0.0, 1.0) as f32
                    } else {
                        0.0
                    }
                })
                .collect();
            let col = resize_area(&logged, freq_bins);
            for (f, v) in col.into_iter().enumerate() {
                data[(s * freq_bins + f) * per + t] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(SpectroSeq {
        segments,
        freq_bins,
        frames: per,
        data,
        max_power,
    })
}

/// Undoes the log normalization and frequency resize of one `[F, L]` slice,
/// returning linear magnitudes `[L][N_BINS]`.
pub fn slice_to_magnitude(slice: &[f32], freq_bins: usize, frames: usize, max_power: f32) -> Vec<Vec<f32>> {
    let denom = (max_power as f64).ln_1p();
    (0..frames)
        .map(|t| {
            let col: Vec<f32> = (0..freq_bins).map(|f| slice[f * frames + t]).collect();
            resize_linear(&col, N_BINS)
                .into_iter()
                .map(|v| ((v.clamp(0.0, 1.0) as f64 * denom).exp_m1().max(0.0).sqrt()) as f32)
                .collect()
        })
        .collect()
}

/// Griffin-Lim phase recovery from magnitudes `[frames][N_BINS]`.
pub fn griffin_lim<R: Rng>(magnitude: &[Vec<f32>], iterations: usize, rng: &mut R) -> Vec<f32> {
    let plans = Plans::new();
    let mut spec: Vec<Vec<Complex<f32>>> = magnitude
        .iter()
        .map(|m| {
            m.iter()
                .map(|&a| Complex::from_polar(a, rng.random_range(0.0..std::f32::consts::TAU)))
                .collect()
        })
        .collect();
    let mut signal = plans.synthesize(&spec);
    for _ in 0..iterations {
        let est = plans.analyze(&signal);
        for ((frame, m), e) in spec.iter_mut().zip(magnitude).zip(&est) {
            for ((c, &a), z) in frame.iter_mut().zip(m).zip(e) {
                let n = z.norm();
                *c = if n > 1e-12 {
                    z * (a / n)
                } else {
                    Complex::new(a, 0.0)
                };
            }
        }
        signal = plans.synthesize(&spec);
    }
    signal
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_arithmetic() {
        assert_eq!(frame_count(16_000), 30);
        assert_eq!(frame_count(1023), 0);
        assert_eq!(frames_per_note(), 16);
    }

    #[test]
    fn resize_area_preserves_mean() {
        let src: Vec<f32> = (0..513).map(|i| ((i * 37) % 11) as f32).collect();
        let out = resize_area(&src, 64);
        let m_in: f64 = src.iter().map(|&v| v as f64).sum::<f64>() / 513.0;
        let m_out: f64 = out.iter().map(|&v| v as f64).sum::<f64>() / 64.0;
        assert!((m_in - m_out).abs() < 1e-4);
        assert_eq!(resize_area(&[3.0; 10], 4), vec![3.0; 4]);
    }

    #[test]
    fn stft_resynthesis_is_exact() {
        let x: Vec<f32> = (0..4096).map(|i| (i as f32 * 0.05).sin() * 0.3).collect();
        let plans = Plans::new();
        let y = plans.synthesize(&plans.analyze(&x));
        for i in 600..3500 {
            assert!((x[i] - y[i]).abs() < 1e-4, "{i}: {} vs {}", x[i], y[i]);
        }
    }
}
