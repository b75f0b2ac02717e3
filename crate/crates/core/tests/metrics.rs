use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sps_core::evaluation::disentangle::{delta_z_ratio, query_precision, LatentPairs};
use sps_core::evaluation::linear::{linear_fit, r_squared};
use sps_core::evaluation::traversal::detect_color;
use sps_datasets::world::{render, Camera, RenderConfig};

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Latents `z [n, 3]` and a noisy linear truth `[n, 2]`.
fn probe_problem(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = gaussian(&mut rng, n * 3);
    let noise = gaussian(&mut rng, n * 2);
    let truth = (0..n)
        .flat_map(|i| {
            let r = &z[i * 3..i * 3 + 3];
            [
                1.5 * r[0] - r[2] + 0.3 * noise[2 * i],
                r[1] * r[1] + 0.5 * r[0] + 0.2 * noise[2 * i + 1],
            ]
        })
        .collect();
    (z, truth)
}

fn pairs_from(anchor: &[f64], augmented: &[f64], d: usize) -> LatentPairs {
    LatentPairs {
        d,
        anchor: anchor.iter().map(|&v| v as f32).collect(),
        augmented: augmented.iter().map(|&v| v as f32).collect(),
    }
}

proptest! {
    #[test]
    fn probe_mse_is_invariant_under_invertible_affine_maps(
        seed in any::<u64>(),
        a in prop::collection::vec(-2.0f64..2.0, 9),
        b in prop::collection::vec(-10.0f64..10.0, 3),
    ) {
        let det = a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
            + a[2] * (a[3] * a[7] - a[4] * a[6]);
        prop_assume!(det.abs() > 0.1);
        let n = 200;
        let (z, truth) = probe_problem(seed, n);
        let mapped: Vec<f64> = z
            .chunks(3)
            .flat_map(|r| (0..3).map(|i| (0..3).map(|j| a[i * 3 + j] * r[j]).sum::<f64>() + b[i]).collect::<Vec<_>>())
            .collect();
        let f0 = linear_fit(&z, 3, &truth, 2).unwrap();
        let f1 = linear_fit(&mapped, 3, &truth, 2).unwrap();
        for (x, y) in f0.per_axis_mse.iter().zip(&f1.per_axis_mse) {
            prop_assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn r_squared_is_invariant_under_affine_maps(seed in any::<u64>(), s in 0.01f64..100.0, neg in any::<bool>(), c in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, 100);
        let y: Vec<f64> = x.iter().zip(gaussian(&mut rng, 100)).map(|(v, e)| 2.0 * v + e).collect();
        let s = if neg { -s } else { s };
        let mapped: Vec<f64> = x.iter().map(|v| s * v + c).collect();
        let r0 = r_squared(&x, &y).unwrap();
        let r1 = r_squared(&mapped, &y).unwrap();
        prop_assert!((r0 - r1).abs() <= 1e-9);
        prop_assert!((0.0..=1.0).contains(&r0));
    }

    #[test]
    fn delta_z_ratio_ignores_per_dim_rescaling(seed in any::<u64>(), scale in prop::collection::vec(0.1f64..10.0, 4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchor = gaussian(&mut rng, 50 * 4);
        let shift = gaussian(&mut rng, 50 * 4);
        let augmented: Vec<f64> = anchor
            .iter()
            .zip(&shift)
            .enumerate()
            .map(|(i, (a, e))| a + if i % 4 == 3 { *e } else { 0.1 * e })
            .collect();
        let std = vec![1.0; 4];
        let r0 = delta_z_ratio(&pairs_from(&anchor, &augmented, 4), &std, &[0, 1, 2], &[3]).unwrap();
        let rescale = |v: &[f64]| -> Vec<f64> { v.iter().enumerate().map(|(i, x)| x * scale[i % 4]).collect() };
        let r1 = delta_z_ratio(&pairs_from(&rescale(&anchor), &rescale(&augmented), 4), &scale, &[0, 1, 2], &[3]).unwrap();
        prop_assert!((r0 - r1).abs() <= 1e-4 * r0.max(1.0), "{r0} vs {r1}");
    }

    #[test]
    fn query_finds_the_dims_that_move(seed in any::<u64>(), target in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchor = gaussian(&mut rng, 40 * 5);
        let shift = gaussian(&mut rng, 40 * 5);
        let augmented: Vec<f64> = anchor
            .iter()
            .zip(&shift)
            .enumerate()
            .map(|(i, (a, e))| a + if i % 5 == target { 3.0 + e.abs() } else { 0.01 * e })
            .collect();
        let q = query_precision(&pairs_from(&anchor, &augmented, 5), &[1.0; 5], &[target]).unwrap();
        prop_assert_eq!(q.precision, 1.0);
        prop_assert_eq!(q.predicted, vec![target]);
    }
}

#[test]
fn uninformative_latents_score_the_truth_variance() {
    let n = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = gaussian(&mut rng, n * 3);
    let truth: Vec<f64> = gaussian(&mut rng, n).iter().map(|v| 2.0 * v + 1.0).collect();
    let mean = truth.iter().sum::<f64>() / n as f64;
    let var = truth.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let fit = linear_fit(&z, 3, &truth, 1).unwrap();
    // Three spurious regressors remove about 3/n of the variance.
    assert!((fit.aggregate_mse / var - 1.0).abs() < 0.01, "mse {} var {var}", fit.aggregate_mse);
    assert!(fit.r2[0] < 0.01);
}

#[test]
fn random_augmentation_scores_the_random_baseline() {
    let (d, trials) = (6, 2000);
    let positives = [1, 4];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut total = 0.0;
    let mut random = 0.0;
    for _ in 0..trials {
        let anchor = gaussian(&mut rng, 10 * d);
        let augmented = gaussian(&mut rng, 10 * d);
        let q = query_precision(&pairs_from(&anchor, &augmented, d), &vec![1.0; d], &positives).unwrap();
        total += q.precision;
        random = q.random;
    }
    let mean = total / trials as f64;
    // Precision lies in [0, 1], so its variance is at most 1/4.
    let se = (0.25 / trials as f64).sqrt();
    assert!((mean - random).abs() < 4.0 * se, "mean {mean} baseline {random}");
    assert!((random - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn color_detector_reads_a_rendered_ball() {
    let camera = Camera::default();
    for (rgb, hue) in [([0.9f32, 0.1, 0.1], 0.0f32), ([0.1, 0.8, 0.2], 0.357), ([0.2, 0.3, 0.9], 0.643)] {
        let img = render([0.0, 1.5, 3.0], 0.6, rgb, &camera, &RenderConfig::default()).unwrap();
        let (h, s, _) = detect_color(img.data(), camera.height, camera.width);
        let dh = (h - hue).abs().min(1.0 - (h - hue).abs());
        assert!(dh < 0.03, "hue {h} for {rgb:?}, want {hue}");
        assert!(s > 0.5);
    }
}
