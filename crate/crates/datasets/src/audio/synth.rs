//! Additive synthesis of notes and major-scale clips.

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const NOTE_SECONDS: f64 = 0.512;
pub const FADE_SECONDS: f64 = 0.01;
pub const PEAK: f32 = 0.5;
pub const MAJOR_STEPS: [i32; 7] = [2, 2, 1, 2, 2, 2, 1];
pub const NOTES_PER_CLIP: usize = 15;

pub fn note_samples() -> usize {
    (NOTE_SECONDS * SAMPLE_RATE as f64).round() as usize
}

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

pub fn hz_to_midi(hz: f64) -> f64 {
    69.0 + 12.0 * (hz / 440.0).log2()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timbre {
    pub name: String,
    /// Relative amplitude of harmonics `1, 2, 3, ...`.
    pub harmonics: Vec<f32>,
    /// Exponential amplitude decay in 1/s.
    pub decay: f32,
}

impl Timbre {
    fn from_fn(name: &str, n: usize, decay: f32, amp: impl Fn(usize) -> f32) -> Self {
        Self {
            name: name.into(),
            harmonics: (1..=n).map(amp).collect(),
            decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.harmonics.is_empty() || self.harmonics.len() > 16 {
            return Err(DataError::Config(format!(
                "timbre `{}` needs 1 to 16 harmonics",
                self.name
            )));
        }
        if self.harmonics[0] <= 0.0 || self.harmonics.iter().any(|&a| !(a >= 0.0)) {
            return Err(DataError::Config(format!(
                "timbre `{}` needs non-negative amplitudes and a positive fundamental",
                self.name
            )));
        }
        Ok(())
    }
}

/// The eight timbres. Index 0 is the single-instrument default.
pub fn timbre_family() -> Vec<Timbre> {
    vec![
        Timbre::from_fn("reed", 12, 0.5, |k| 1.0 / k as f32),
        Timbre::from_fn("flute", 3, 0.3, |k| [1.0, 0.2, 0.05][k - 1]),
        Timbre::from_fn("clarinet", 11, 0.4, |k| {
            if k % 2 == 1 {
                1.0 / k as f32
            } else {
                0.1 / k as f32
            }
        }),
        Timbre::from_fn("bright", 16, 1.0, |k| 1.0 / (k as f32).sqrt()),
        Timbre::from_fn("mellow", 6, 2.0, |k| 1.0 / (k * k) as f32),
        Timbre::from_fn("pluck", 10, 4.0, |k| 1.0 / k as f32),
        Timbre::from_fn("organ", 8, 0.0, |k| {
            [1.0, 0.8, 0.6, 0.0, 0.4, 0.0, 0.0, 0.3][k - 1]
        }),
        Timbre::from_fn("nasal", 9, 1.5, |k| {
            [1.0, 0.6, 0.7, 0.3, 0.5, 0.2, 0.3, 0.1, 0.2][k - 1]
        }),
    ]
}

/// One tone at fundamental `f0` Hz. Harmonics at or above Nyquist are
/// dropped; the result peaks at [`PEAK`].
pub fn synth_tone(f0: f64, n_samples: usize, timbre: &Timbre) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let nyquist = 0.5 * sr;
    let fade = (FADE_SECONDS * sr).round() as usize;
    let partials: Vec<(f64, f64)> = timbre
        .harmonics
        .iter()
        .enumerate()
        .map(|(k, &a)| ((k + 1) as f64 * f0, a as f64))
        .filter(|&(f, a)| f < nyquist && a > 0.0)
        .collect();
    let mut out: Vec<f64> = (0..n_samples)
        .map(|i| {
            let t = i as f64 / sr;
            let env = (-(timbre.decay as f64) * t).exp();
            let s: f64 = partials
                .iter()
                .map(|&(f, a)| a * (std::f64::consts::TAU * f * t).sin())
                .sum();
            env * s
        })
        .collect();
    for i in 0..fade.min(n_samples) {
        let g = i as f64 / fade as f64;
        out[i] *= g;
        out[n_samples - 1 - i] *= g;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { PEAK as f64 / peak } else { 0.0 };
    out.into_iter().map(|v| (v * scale) as f32).collect()
}

pub fn synth_note(midi: i32, duration: f64, timbre: &Timbre) -> Result<Vec<f32>> {
    if !(21..=108).contains(&midi) {
        return Err(DataError::Contract(format!("midi {midi} outside [21, 108]")));
    }
    let n = (duration * SAMPLE_RATE as f64).round() as usize;
    Ok(synth_tone(midi_to_hz(midi as f64), n, timbre))
}

/// Fifteen pitches: a major scale up from `start` and back down.
pub fn scale_pitches(start: i32) -> Vec<i32> {
    let mut up = vec![start];
    for s in MAJOR_STEPS {
        up.push(up.last().unwrap() + s);
    }
    let mut all = up.clone();
    all.extend(up.iter().rev().skip(1));
    all
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleClip {
    pub samples: Vec<f32>,
    pub note_pitches: Vec<i32>,
    pub shift: f64,
    pub timbre_id: usize,
}

impl ScaleClip {
    /// Sounding pitch of each note in (fractional) MIDI units.
    pub fn true_pitches(&self) -> Vec<f64> {
        self.note_pitches
            .iter()
            .map(|&p| p as f64 + self.shift)
            .collect()
    }
}

pub fn make_scale_clip(
    start_midi: i32,
    timbre_id: usize,
    timbres: &[Timbre],
    shift: f64,
) -> Result<ScaleClip> {
    let timbre = timbres
        .get(timbre_id)
        .ok_or_else(|| DataError::Config(format!("unknown timbre {timbre_id}")))?;
    timbre.validate()?;
    let note_pitches = scale_pitches(start_midi);
    if note_pitches.iter().any(|p| !(21..=108).contains(p)) {
        return Err(DataError::Contract(format!(
            "scale from {start_midi} leaves [21, 108]"
        )));
    }
    let n = note_samples();
    let mut samples = Vec::with_capacity(n * NOTES_PER_CLIP);
    for &p in &note_pitches {
        samples.extend(synth_tone(midi_to_hz(p as f64 + shift), n, timbre));
    }
    Ok(ScaleClip {
        samples,
        note_pitches,
        shift,
        timbre_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midi_reference_pitches() {
        assert_eq!(midi_to_hz(69.0), 440.0);
        assert!((midi_to_hz(81.0) - 880.0).abs() < 1e-9);
        assert!((hz_to_midi(261.6255653) - 60.0).abs() < 1e-6);
    }

    #[test]
    fn a_sharp_scale() {
        assert_eq!(
            scale_pitches(70),
            vec![70, 72, 74, 75, 77, 79, 81, 82, 81, 79, 77, 75, 74, 72, 70]
        );
    }

    #[test]
    fn family_is_valid() {
        let fam = timbre_family();
        assert_eq!(fam.len(), 8);
        for t in &fam {
            t.validate().unwrap();
        }
    }

    #[test]
    fn note_peak_and_fades() {
        let fam = timbre_family();
        let x = synth_note(60, NOTE_SECONDS, &fam[0]).unwrap();
        assert_eq!(x.len(), 8192);
        let peak = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - PEAK).abs() < 1e-6);
        assert_eq!(x[0], 0.0);
        assert!(x[8191].abs() < 0.01);
        assert!(synth_note(120, 0.1, &fam[0]).is_err());
    }
}
