use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sps_core::groups::{perturbed_spec_catalog, sample_element, GroupElement, GroupSpec};

fn latent(d: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-5.0f32..5.0, d)
}

fn spec_index() -> impl Strategy<Value = usize> {
    0..perturbed_spec_catalog().len()
}

#[test]
fn hundred_elements_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f32;
    for spec in perturbed_spec_catalog().into_iter().chain([GroupSpec::audio()]) {
        for _ in 0..100 {
            let e = sample_element(&spec, &mut rng);
            let z: Vec<f32> = (0..5).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
            let mut w = z.clone();
            e.apply(&mut w).unwrap();
            e.inverse().apply(&mut w).unwrap();
            for (a, b) in z.iter().zip(&w) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst <= 1e-5, "round trip error {worst}");
}

proptest! {
    #[test]
    fn inverse_round_trip(i in spec_index(), seed in any::<u64>(), z in latent(3)) {
        let spec = &perturbed_spec_catalog()[i];
        let e = sample_element(spec, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut w = z.clone();
        e.apply(&mut w).unwrap();
        e.inverse().apply(&mut w).unwrap();
        for (a, b) in z.iter().zip(&w) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn unacted_dims_are_bit_identical(i in spec_index(), seed in any::<u64>(), z in latent(5)) {
        let spec = &perturbed_spec_catalog()[i];
        let e = sample_element(spec, &mut ChaCha8Rng::seed_from_u64(seed));
        let mut w = z.clone();
        e.apply(&mut w).unwrap();
        for j in 0..5 {
            if !spec.acted_dims().contains(&j) {
                prop_assert_eq!(z[j].to_bits(), w[j].to_bits());
            }
        }
    }

    #[test]
    fn rotations_are_proper(i in spec_index(), seed in any::<u64>()) {
        let e = sample_element(&perturbed_spec_catalog()[i], &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(e.orthogonality_error() <= 1e-5);
        prop_assert!((e.determinant() - 1.0).abs() <= 1e-5);
    }

    #[test]
    fn composition_matches_sequential_application(i in spec_index(), s1 in any::<u64>(), s2 in any::<u64>(), z in latent(3)) {
        let spec = &perturbed_spec_catalog()[i];
        let e1 = sample_element(spec, &mut ChaCha8Rng::seed_from_u64(s1));
        let e2 = sample_element(spec, &mut ChaCha8Rng::seed_from_u64(s2));
        let mut seq = z.clone();
        e1.apply(&mut seq).unwrap();
        e2.apply(&mut seq).unwrap();
        let mut once = z.clone();
        e2.compose(&e1).unwrap().apply(&mut once).unwrap();
        for (a, b) in seq.iter().zip(&once) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }

    // Dyadic shifts and inputs add without rounding.
    #[test]
    fn translation_composition_is_exact(t1 in -64i32..64, t2 in -64i32..64, z in prop::collection::vec(-256i32..256, 2)) {
        let e1 = GroupElement::translation(vec![0, 1], vec![t1 as f64 / 8.0, -t1 as f64 / 4.0]);
        let e2 = GroupElement::translation(vec![0, 1], vec![t2 as f64 / 8.0, t2 as f64 / 16.0]);
        let z: Vec<f32> = z.iter().map(|&v| v as f32 / 8.0).collect();
        let mut seq = z.clone();
        e1.apply(&mut seq).unwrap();
        e2.apply(&mut seq).unwrap();
        let mut once = z;
        e2.compose(&e1).unwrap().apply(&mut once).unwrap();
        prop_assert_eq!(seq, once);
    }

    #[test]
    fn same_element_at_every_timestep(i in spec_index(), seed in any::<u64>(), z in latent(3), t in 1usize..6) {
        let e = sample_element(&perturbed_spec_catalog()[i], &mut ChaCha8Rng::seed_from_u64(seed));
        let mut seq: Vec<f32> = (0..t).flat_map(|_| z.clone()).collect();
        e.apply_seq(&mut seq, 3).unwrap();
        let mut one = z.clone();
        e.apply(&mut one).unwrap();
        for row in seq.chunks(3) {
            prop_assert_eq!(row, &one[..]);
        }
    }
}
