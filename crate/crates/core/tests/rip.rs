mod common;

use lscs::measurement::{
    delta_exhaustive, delta_sampled, theta_exhaustive, theta_sampled, MeasurementMatrix, RipEstimator,
    RipMode,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;

const BUDGET: u64 = 10_000_000;

#[test]
fn exhaustive_matches_rayleigh_oracles() {
    for seed in 0..3 {
        let a = MeasurementMatrix::gaussian(6, 10, seed).unwrap();
        let g = a.gram();
        for s in 1..=4 {
            let exact = delta_exhaustive(&a, s, BUDGET).unwrap();
            let oracle = common::oracle_delta(&g, s);
            assert!((exact - oracle).abs() < 1e-6, "seed {seed} delta_{s}: {exact} vs {oracle}");
        }
        for (s, sp) in [(1, 1), (1, 2), (2, 2), (1, 3), (2, 3)] {
            let exact = theta_exhaustive(&a, s, sp, BUDGET).unwrap();
            let oracle = common::oracle_theta(&g, s, sp);
            assert!(
                (exact - oracle).abs() < 1e-6,
                "seed {seed} theta_{s},{sp}: {exact} vs {oracle}"
            );
        }
    }
}

#[test]
fn orthonormal_constants_vanish() {
    let q = DMatrix::<f64>::identity(8, 8);
    let a = MeasurementMatrix::from_unit_columns(q).unwrap();
    for s in 1..=8 {
        assert!(delta_exhaustive(&a, s, BUDGET).unwrap() < 1e-12);
    }
    for s in 1..=4 {
        for sp in 1..=(8 - s).min(4) {
            assert!(theta_exhaustive(&a, s, sp, BUDGET).unwrap() < 1e-12);
        }
    }
}

#[test]
fn computed_tables_are_monotone() {
    for seed in 0..4 {
        let a = MeasurementMatrix::gaussian(6, 10, 100 + seed).unwrap();
        let mut est = RipEstimator::new(&a, RipMode::default());
        for s in 1..=5 {
            est.delta(s).unwrap();
            for sp in 1..=(10 - s).min(4) {
                est.theta(s, sp).unwrap();
            }
        }
        est.table().check_monotone(1e-12).unwrap();
    }
}

#[test]
fn theta_is_symmetric_in_its_arguments() {
    let a = MeasurementMatrix::gaussian(6, 10, 7).unwrap();
    let t12 = theta_exhaustive(&a, 1, 2, BUDGET).unwrap();
    let t21 = theta_exhaustive(&a, 2, 1, BUDGET).unwrap();
    assert!((t12 - t21).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sampled_values_are_lower_bounds(seed in 0u64..10_000, s in 1usize..4) {
        let a = MeasurementMatrix::gaussian(6, 10, seed).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let exact = delta_exhaustive(&a, s, BUDGET).unwrap();
        let sampled = delta_sampled(&a, s, 50, &mut rng).unwrap();
        prop_assert!(sampled <= exact + 1e-12);
        let exact = theta_exhaustive(&a, s, 2, BUDGET).unwrap();
        let sampled = theta_sampled(&a, s, 2, 50, &mut rng).unwrap();
        prop_assert!(sampled <= exact + 1e-12);
    }

    #[test]
    fn thresholds_respect_definitions(seed in 0u64..10_000) {
        let a = MeasurementMatrix::gaussian(9, 12, seed).unwrap();
        let mut est = RipEstimator::new(&a, RipMode::default());
        let th = lscs::measurement::scan_thresholds(&mut est, 12).unwrap();
        if th.s_star > 0 {
            prop_assert!(est.delta(th.s_star).unwrap().value < 0.5);
        }
        if th.s_star < 12 {
            prop_assert!(est.delta(th.s_star + 1).unwrap().value >= 0.5);
        }
        if th.s_star_star > 0 {
            let s = th.s_star_star;
            prop_assert!(est.delta(2 * s).unwrap().value + est.theta(s, 2 * s).unwrap().value < 1.0);
        }
    }
}
