//! Additive-synthesis audio, spectrogram pipeline and pitch detection.

pub mod dataset;
pub mod stft;
pub mod synth;
pub mod yin;

pub use dataset::{make_audio_dataset, write_wav, AudioClip, AudioDataConfig, AudioDataset, AudioManifest};
pub use stft::{griffin_lim, spectrogram, SpectroSeq};
pub use synth::{make_scale_clip, midi_to_hz, synth_note, timbre_family, ScaleClip, Timbre};
pub use yin::{detect_pitch, YinConfig};
