use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sps_datasets::audio::stft::{
    griffin_lim, power_spectrogram, slice_to_magnitude, spectrogram_of, N_BINS,
};
use sps_datasets::audio::synth::{note_samples, NOTE_SECONDS, SAMPLE_RATE};
use sps_datasets::audio::*;

fn tone(f: f64, n: usize, harmonics: &[(f64, f64)]) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            harmonics
                .iter()
                .map(|&(k, a)| a * (std::f64::consts::TAU * k * f * t).sin())
                .sum::<f64>() as f32
        })
        .collect()
}

#[test]
fn yin_on_analytic_signals() {
    let f = detect_pitch(&tone(440.0, 4096, &[(1.0, 1.0)])).unwrap().unwrap();
    assert!((f - 440.0).abs() <= 4.4, "{f}");

    let f = detect_pitch(&tone(220.0, 4096, &[(1.0, 1.0), (3.0, 0.8)]))
        .unwrap()
        .unwrap();
    assert!((f - 220.0).abs() <= 2.2, "{f}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise: Vec<f32> = (0..8192).map(|_| rng.random_range(-0.5..0.5)).collect();
    assert_eq!(detect_pitch(&noise).unwrap(), None);
}

#[test]
fn synthesis_round_trip_within_one_percent() {
    let family = timbre_family();
    let mut worst: f64 = 0.0;
    for midi in 46..=96 {
        for timbre in &family {
            let x = synth_note(midi, NOTE_SECONDS, timbre).unwrap();
            let target = midi_to_hz(midi as f64);
            let f = detect_pitch(&x).unwrap().unwrap_or(f64::NAN);
            let err = (f - target).abs() / target;
            assert!(err <= 0.01, "midi {midi} {}: {f} vs {target}", timbre.name);
            worst = worst.max(err);
        }
    }
    assert!(worst < 0.01);
}

#[test]
fn pitch_shift_scales_detected_f0() {
    let family = timbre_family();
    let factor = 2f64.powf(0.5 / 12.0);
    for start in [48, 60, 72, 84] {
        let a = make_scale_clip(start, 0, &family, 0.0).unwrap();
        let b = make_scale_clip(start, 0, &family, 0.5).unwrap();
        let n = note_samples();
        for k in 0..15 {
            let fa = detect_pitch(&a.samples[k * n..(k + 1) * n]).unwrap().unwrap();
            let fb = detect_pitch(&b.samples[k * n..(k + 1) * n]).unwrap().unwrap();
            assert!((fb / fa - factor).abs() / factor <= 0.01);
        }
    }
}

#[test]
fn pure_tone_peak_bin() {
    for (f, bin) in [(1000.0, 64), (500.0, 32), (2500.0, 160)] {
        let p = power_spectrogram(&tone(f, 16_000, &[(1.0, 1.0)])).unwrap();
        assert_eq!(p.len(), 30);
        for frame in &p {
            let argmax = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, bin);
        }
    }
}

#[test]
fn silence_gives_zero_spectrogram() {
    let s = spectrogram_of(&vec![0.0; 15 * 8192], 15, 64).unwrap();
    assert!(s.data.iter().all(|&v| v == 0.0));
    assert_eq!((s.segments, s.freq_bins, s.frames), (15, 64, 16));
}

#[test]
fn scale_clip_slices() {
    let family = timbre_family();
    let clip = make_scale_clip(70, 0, &family, 0.0).unwrap();
    assert_eq!(clip.samples.len(), 15 * 8192);
    let full = spectrogram(&clip, N_BINS).unwrap();
    assert_eq!((full.segments, full.freq_bins, full.frames), (15, 513, 16));
    let small = spectrogram(&clip, 64).unwrap();
    assert_eq!(small.data.len(), 15 * 64 * 16);
    assert!(small.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(small.data.iter().any(|&v| v > 0.5));
}

#[test]
fn griffin_lim_recovers_pitch_from_slices() {
    let family = timbre_family();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut voiced, mut total) = (0, 0);
    for start in [70, 76, 82, 88, 94] {
        let clip = make_scale_clip(start, 0, &family, 0.0).unwrap();
        let spec = spectrogram(&clip, 64).unwrap();
        for k in [0, 3, 7] {
            let mag = slice_to_magnitude(spec.segment(k), 64, 16, spec.max_power);
            let wave = griffin_lim(&mag, 64, &mut rng);
            total += 1;
            if let Some(f) = detect_pitch(&wave).unwrap() {
                voiced += 1;
                let semis = 12.0 * (f / midi_to_hz(clip.note_pitches[k] as f64)).log2();
                assert!(semis.abs() < 1.0, "start {start} note {k}: {semis} semitones off");
            }
        }
    }
    assert!(voiced * 3 >= total * 2, "{voiced}/{total} voiced");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn spectrogram_values_in_unit_range(seed in 0u64..1000, gain in 0.001f32..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f32> = (0..4 * 2048).map(|_| gain * rng.random_range(-1.0..1.0)).collect();
        let s = spectrogram_of(&x, 4, 64).unwrap();
        prop_assert!(s.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
