//! Pitch linearity of audio models, in both directions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sps_datasets::audio::stft::{griffin_lim, slice_to_magnitude};
use sps_datasets::audio::synth::hz_to_midi;
use sps_datasets::audio::detect_pitch;
use sps_datasets::seed::derive_seed;

use super::linear::r_squared;
use super::{encode_sequences, LatentStats};
use crate::data::Sequence;
use crate::error::{CoreError, Result};
use crate::models::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchOptions {
    pub points: usize,
    pub griffin_lim_iterations: usize,
    pub seed: u64,
}

impl Default for PitchOptions {
    fn default() -> Self {
        Self {
            points: 50,
            griffin_lim_iterations: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisProbe {
    pub z: Vec<f64>,
    /// Detected pitch in semitones, absent where unvoiced.
    pub semitones: Vec<Option<f64>>,
}

impl SynthesisProbe {
    pub fn unvoiced(&self) -> usize {
        self.semitones.iter().filter(|s| s.is_none()).count()
    }

    /// R² of detected semitones on `z` over the voiced points; `None` when
    /// more than half of the points are unvoiced.
    pub fn r2(&self) -> Result<Option<f64>> {
        if self.unvoiced() * 2 > self.semitones.len() {
            return Ok(None);
        }
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .z
            .iter()
            .zip(&self.semitones)
            .filter_map(|(&z, s)| s.map(|s| (z, s)))
            .unzip();
        if x.len() < 3 {
            return Ok(None);
        }
        r_squared(&x, &y).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchLinearity {
    pub embedding_r2: f64,
    /// `None` marks a failed synthesis evaluation.
    pub synthesis_r2: Option<f64>,
    pub synthesis: SynthesisProbe,
}

/// R² of the first content dim against the true pitch of every segment.
pub fn embedding_r2(model: &Model, seqs: &[Sequence]) -> Result<f64> {
    let d = model.config.latent_dim();
    let z = encode_sequences(model, seqs)?;
    let x: Vec<f64> = z.chunks(d).map(|r| r[0] as f64).collect();
    let y: Vec<f64> = seqs.iter().flat_map(|s| s.truths.iter().map(|&v| v as f64)).collect();
    r_squared(&x, &y)
}

/// Decodes `points` latents spanning the test range of content dim 0 (the
/// other dims at their test means), inverts each slice with Griffin-Lim and
/// detects its pitch.
pub fn synthesis_probe(
    model: &Model,
    stats: &LatentStats,
    reference_power: f32,
    opts: &PitchOptions,
) -> Result<SynthesisProbe> {
    let [_, f, l] = model.config.obs_shape;
    let d = model.config.latent_dim();
    if opts.points < 2 {
        return Err(CoreError::Config("synthesis probe needs at least 2 points".into()));
    }
    let (lo, hi) = (stats.min[0], stats.max[0]);
    let z: Vec<f64> = (0..opts.points)
        .map(|i| lo + (hi - lo) * i as f64 / (opts.points - 1) as f64)
        .collect();
    let latents: Vec<f32> = z
        .iter()
        .flat_map(|&v| {
            let mut row: Vec<f32> = stats.mean.iter().map(|&m| m as f32).collect();
            row[0] = v as f32;
            row
        })
        .collect();
    debug_assert_eq!(latents.len(), opts.points * d);
    let slices = model.decode_latents(&latents)?;
    let mut semitones = Vec::with_capacity(opts.points);
    for (i, slice) in slices.chunks(f * l).enumerate() {
        let mag = slice_to_magnitude(slice, f, l, reference_power);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, "griffin-lim", i as u64));
        let wave = griffin_lim(&mag, opts.griffin_lim_iterations, &mut rng);
        semitones.push(detect_pitch(&wave)?.map(hz_to_midi));
    }
    Ok(SynthesisProbe { z, semitones })
}

pub fn pitch_linearity(
    model: &Model,
    seqs: &[Sequence],
    stats: &LatentStats,
    reference_power: f32,
    opts: &PitchOptions,
) -> Result<PitchLinearity> {
    let embedding_r2 = embedding_r2(model, seqs)?;
    let synthesis = synthesis_probe(model, stats, reference_power, opts)?;
    let synthesis_r2 = synthesis.r2()?;
    if synthesis_r2.is_none() {
        log::warn!(
            "synthesis pitch probe failed: {}/{} points unvoiced",
            synthesis.unvoiced(),
            synthesis.semitones.len()
        );
    }
    Ok(PitchLinearity {
        embedding_r2,
        synthesis_r2,
        synthesis,
    })
}
