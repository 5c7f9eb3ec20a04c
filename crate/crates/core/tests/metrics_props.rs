//! Property tests for the measurement core.

use proptest::prelude::*;
use transferbench_core::geometry::normalize_direction;
use transferbench_core::metrics::{
    cdf_gap_area, transferability_score, OperatingCharacteristic,
};

fn distortion_list(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..5.0, n..=n)
}

/// Lists where the white box strictly dominates the black box in total, so
/// the score denominator is valid.
fn scored_triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (5usize..40).prop_flat_map(|n| {
        (
            distortion_list(n),
            prop::collection::vec(0.0f64..0.5, n..=n),
            prop::collection::vec(0.6f64..5.0, n..=n),
        )
    })
}

proptest! {
    #[test]
    fn score_is_scale_equivariant((st, wb, bb) in scored_triple(), c in 0.01f64..100.0) {
        let base = transferability_score(&st, &wb, &bb).unwrap().value;
        let scale = |v: &[f64]| -> Vec<f64> { v.iter().map(|x| x * c).collect() };
        let scaled = transferability_score(&scale(&st), &scale(&wb), &scale(&bb)).unwrap().value;
        prop_assert!((base - scaled).abs() <= 1e-9 * base.abs().max(1.0));
    }

    #[test]
    fn score_ignores_input_order((st, wb, bb) in scored_triple(), seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let shuffle = |v: &[f64], rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            let mut s = v.to_vec();
            s.shuffle(rng);
            s
        };
        let base = transferability_score(&st, &wb, &bb).unwrap().value;
        let shuffled = transferability_score(
            &shuffle(&st, &mut rng),
            &shuffle(&wb, &mut rng),
            &shuffle(&bb, &mut rng),
        )
        .unwrap()
        .value;
        prop_assert_eq!(base, shuffled);
    }

    #[test]
    fn characteristic_is_a_nondecreasing_cdf(d in distortion_list(30)) {
        let oc = OperatingCharacteristic::new(&d).unwrap();
        let max = d.iter().cloned().fold(0.0f64, f64::max);
        let mut last = 0.0;
        for i in 0..=50 {
            let level = oc.eval(max * i as f64 / 50.0);
            prop_assert!(level >= last);
            prop_assert!((0.0..=1.0).contains(&level));
            last = level;
        }
        prop_assert_eq!(oc.eval(max), 1.0);
        if d.iter().all(|&v| v > 0.0) {
            prop_assert_eq!(oc.eval(0.0), 0.0);
        }
    }

    #[test]
    fn lebesgue_sum_equals_cdf_gap_area((st, _wb, bb) in scored_triple()) {
        let n = st.len() as f64;
        let numerator: f64 = {
            let sort = |v: &[f64]| { let mut s = v.to_vec(); s.sort_by(f64::total_cmp); s };
            let (sst, sbb) = (sort(&st), sort(&bb));
            sst.iter().zip(&sbb).map(|(a, b)| b - a).sum()
        };
        let area = cdf_gap_area(
            &OperatingCharacteristic::new(&st).unwrap(),
            &OperatingCharacteristic::new(&bb).unwrap(),
        );
        prop_assert!(
            (numerator - n * area).abs() <= 1e-9 * numerator.abs().max(n * area.abs()).max(1e-12),
            "sum {} vs area {}", numerator, n * area
        );
    }

    #[test]
    fn normalized_directions_carry_sqrt_n_norm(raw in prop::collection::vec(-10.0f64..10.0, 4..128)) {
        prop_assume!(raw.iter().any(|&v| v != 0.0));
        let dir = normalize_direction(&raw, "p", "s", 0).unwrap();
        let n = raw.len() as f64;
        prop_assert!((dir.norm() - n.sqrt()).abs() <= 1e-9 * n.sqrt());
        // Idempotence up to float noise.
        let again = normalize_direction(&dir.u, "p", "s", 0).unwrap();
        for (a, b) in dir.u.iter().zip(&again.u) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
