//! Scale-clip datasets stored as spectrogram slice blocks.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::stft::{spectrogram, SpectroSeq};
use super::synth::{make_scale_clip, timbre_family, ScaleClip, Timbre, SAMPLE_RATE};
use crate::blob::{read_blob, read_json, write_blob, write_json};
use crate::error::{DataError, Result};
use crate::seed::rng_for;

pub const AUDIO_KIND: &str = "audio";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioDataConfig {
    /// Inclusive range of scale start pitches.
    pub start_range: [i32; 2],
    pub timbres: Vec<usize>,
    /// Test clips are shifted up by `U(0, max_test_shift)` semitones.
    pub max_test_shift: f64,
    pub freq_bins: usize,
}

impl AudioDataConfig {
    /// 27 single-timbre clips starting A#4 through C7.
    pub fn single_timbre() -> Self {
        Self {
            start_range: [70, 96],
            timbres: vec![0],
            max_test_shift: 1.0,
            freq_bins: 64,
        }
    }

    /// Every timbre of the family, scales covering C2 through C7.
    pub fn multi_timbre() -> Self {
        Self {
            start_range: [36, 84],
            timbres: (0..timbre_family().len()).collect(),
            max_test_shift: 1.0,
            freq_bins: 64,
        }
    }

    pub fn starts(&self) -> std::ops::RangeInclusive<i32> {
        self.start_range[0]..=self.start_range[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipHeader {
    pub id: usize,
    pub split: String,
    pub start_midi: i32,
    pub pitches: Vec<i32>,
    pub shift: f64,
    pub timbre: usize,
    pub segments: usize,
    pub freq_bins: usize,
    pub frames: usize,
    pub max_power: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub header: ClipHeader,
    /// `[segments, freq_bins, frames]`.
    pub data: Vec<f32>,
}

impl AudioClip {
    pub fn segment_len(&self) -> usize {
        self.header.freq_bins * self.header.frames
    }

    pub fn segment(&self, i: usize) -> &[f32] {
        let n = self.segment_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn true_pitches(&self) -> Vec<f64> {
        self.header
            .pitches
            .iter()
            .map(|&p| p as f64 + self.header.shift)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioManifest {
    pub kind: String,
    pub seed: u64,
    pub sample_rate: u32,
    pub config: AudioDataConfig,
    pub timbres: Vec<Timbre>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Median per-clip maximum power of the training clips; reference scale
    /// for turning decoded slices back into audio.
    pub reference_power: f32,
}

pub fn clip_file(id: usize) -> String {
    format!("clip_{id:05}.bin")
}

/// Clip plan: `(start, timbre, shift, split)` for every clip, train first.
pub fn plan_clips(cfg: &AudioDataConfig, seed: u64) -> Vec<(i32, usize, f64, &'static str)> {
    let mut plan = Vec::new();
    for &timbre in &cfg.timbres {
        for start in cfg.starts() {
            plan.push((start, timbre, 0.0, "train"));
        }
    }
    let n_train = plan.len();
    for k in 0..n_train {
        let (start, timbre, _, _) = plan[k];
        let mut rng = rng_for(seed, "shift", k as u64);
        let shift = if cfg.max_test_shift > 0.0 {
            rng.random_range(0.0..cfg.max_test_shift)
        } else {
            0.0
        };
        plan.push((start, timbre, shift, "test"));
    }
    plan
}

pub fn render_clip(start: i32, timbre: usize, shift: f64) -> Result<ScaleClip> {
    make_scale_clip(start, timbre, &timbre_family(), shift)
}

pub fn make_audio_dataset(dir: &Path, cfg: &AudioDataConfig, seed: u64) -> Result<AudioManifest> {
    if cfg.timbres.is_empty() || cfg.start_range[0] > cfg.start_range[1] {
        return Err(DataError::Config("audio dataset needs timbres and starts".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let (mut train, mut test, mut powers) = (Vec::new(), Vec::new(), Vec::new());
    for (id, (start, timbre, shift, split)) in plan_clips(cfg, seed).into_iter().enumerate() {
        let clip = render_clip(start, timbre, shift)?;
        let spec: SpectroSeq = spectrogram(&clip, cfg.freq_bins)?;
        let header = ClipHeader {
            id,
            split: split.into(),
            start_midi: start,
            pitches: clip.note_pitches.clone(),
            shift,
            timbre,
            segments: spec.segments,
            freq_bins: spec.freq_bins,
            frames: spec.frames,
            max_power: spec.max_power,
        };
        write_blob(&dir.join(clip_file(id)), &header, &spec.data)?;
        if split == "train" {
            train.push(id);
            powers.push(spec.max_power);
        } else {
            test.push(id);
        }
    }
    powers.sort_by(f32::total_cmp);
    let manifest = AudioManifest {
        kind: AUDIO_KIND.into(),
        seed,
        sample_rate: SAMPLE_RATE,
        config: cfg.clone(),
        timbres: timbre_family(),
        train,
        test,
        reference_power: powers[powers.len() / 2],
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn load_clip(path: &Path) -> Result<AudioClip> {
    let (header, data) = read_blob(path, |h: &ClipHeader| h.segments * h.freq_bins * h.frames)?;
    Ok(AudioClip { header, data })
}

#[derive(Debug, Clone)]
pub struct AudioDataset {
    pub dir: PathBuf,
    pub manifest: AudioManifest,
    pub train: Vec<AudioClip>,
    pub test: Vec<AudioClip>,
}

impl AudioDataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: AudioManifest = read_json(&dir.join(MANIFEST))?;
        if manifest.kind != AUDIO_KIND {
            return Err(DataError::format(
                &dir.join(MANIFEST),
                format!("expected an {AUDIO_KIND} dataset, found `{}`", manifest.kind),
            ));
        }
        let load = |ids: &[usize]| -> Result<Vec<AudioClip>> {
            ids.iter()
                .map(|&id| load_clip(&dir.join(clip_file(id))))
                .collect()
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            train: load(&manifest.train)?,
            test: load(&manifest.test)?,
            manifest,
        })
    }
}

/// PCM16 mono WAV at the synthesis sample rate.
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| match e {
        hound::Error::IoError(io) => DataError::io(path, io),
        other => DataError::format(path, other.to_string()),
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        w.write_sample(v).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_timbre_plan_has_27_training_clips() {
        let plan = plan_clips(&AudioDataConfig::single_timbre(), 1);
        let train: Vec<_> = plan.iter().filter(|p| p.3 == "train").collect();
        assert_eq!(train.len(), 27);
        assert_eq!(train[0].0, 70);
        assert_eq!(train[26].0, 96);
        assert!(plan
            .iter()
            .filter(|p| p.3 == "test")
            .all(|p| (0.0..1.0).contains(&p.2)));
    }

    #[test]
    fn wav_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_wav(&p, &[0.0, 0.5, -0.5]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 16_000);
        assert_eq!(bytes.len(), 44 + 6);
    }
}
