use lscs::bounds::{fact1, fact2, fact3};
use lscs::filter::{genie_ls, simple_cs, FilterConfig, FilterState, LsCsFilter};
use lscs::measurement::MeasurementMatrix;
use lscs::support::{SignalVector, SupportSet};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    a: MeasurementMatrix,
    x: SignalVector,
    y: DVector<f64>,
    prev: SupportSet,
}

fn instance(seed: u64, n: usize, m: usize, k: usize, noise: f64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = MeasurementMatrix::gaussian_with_rng(n, m, &mut rng).unwrap();
    let idx = sample(&mut rng, m, k).into_vec();
    let support = SupportSet::new(m, idx.clone()).unwrap();
    let vals: Vec<f64> = (0..k)
        .map(|_| rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let x = SignalVector::from_support(&support, &vals).unwrap();
    let w = DVector::from_fn(n, |_, _| noise * (2.0 * rng.random::<f64>() - 1.0));
    let y = a.apply(x.as_dvector()).unwrap() + w;
    // previous estimate: drop one true index, add one spurious
    let mut prev: Vec<usize> = idx[1..].to_vec();
    let spurious = (0..m).find(|i| !idx.contains(i)).unwrap();
    prev.push(spurious);
    Instance {
        a,
        x,
        y,
        prev: SupportSet::new(m, prev).unwrap(),
    }
}

fn state(prev: &SupportSet) -> FilterState {
    FilterState {
        t: 0,
        support: prev.clone(),
        x_hat: SignalVector::zeros(prev.dim()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn pipeline_set_identities(seed in 0u64..10_000, alpha in 0.05f64..0.6, alpha_del in 0.0f64..0.6) {
        let inst = instance(seed, 30, 60, 5, 0.02);
        let f = LsCsFilter::new(FilterConfig::new(0.1, alpha, alpha_del)).unwrap();
        let (next, d) = f.step(&state(&inst.prev), &inst.a, &inst.y, Some(&inst.x)).unwrap();
        prop_assert!(inst.prev.is_subset(&d.t_det));
        prop_assert!(d.final_support.is_subset(&d.t_det));
        prop_assert_eq!(d.t_det.difference(&d.final_support).unwrap(), d.deleted.clone());
        prop_assert_eq!(next.support, d.final_support.clone());
        for i in d.t_det.difference(&inst.prev).unwrap().iter() {
            prop_assert!(d.x_csres.get(i).abs() > alpha);
        }
        for i in d.deleted.iter() {
            prop_assert!(d.x_det.get(i).abs() <= alpha_del);
        }
        for i in d.final_support.iter() {
            prop_assert!(d.x_det.get(i).abs() > alpha_del);
        }
    }

    #[test]
    fn detection_and_deletion_facts_hold(seed in 0u64..10_000, alpha in 0.05f64..0.6, alpha_del in 0.0f64..0.6) {
        let inst = instance(seed, 30, 60, 5, 0.05);
        let f = LsCsFilter::new(FilterConfig::new(0.15, alpha, alpha_del)).unwrap();
        let (_, d) = f.step(&state(&inst.prev), &inst.a, &inst.y, Some(&inst.x)).unwrap();
        prop_assert!(fact1(&d, &inst.x, alpha).violations.is_empty());
        prop_assert!(fact2(&d, &inst.x, alpha_del).violations.is_empty());
        prop_assert!(fact3(&d, &inst.x, alpha_del).violations.is_empty());
    }
}

#[test]
fn genie_fixed_point_without_noise() {
    let inst = instance(11, 30, 60, 5, 0.0);
    let support = inst.x.support();
    let f = LsCsFilter::new(FilterConfig::new(0.05, 0.2, 0.1)).unwrap();
    let (next, d) = f.step(&state(&support), &inst.a, &inst.y, Some(&inst.x)).unwrap();
    assert_eq!(next.support, support);
    assert!(next.x_hat.sq_dist(&inst.x) < 1e-20);
    let tr = d.truth.unwrap();
    assert_eq!((tr.misses, tr.extras), (0, 0));
    let genie = genie_ls(&inst.a, &support, &inst.y).unwrap();
    assert!(genie.sq_dist(&next.x_hat) < 1e-20);
}

#[test]
fn deletion_threshold_is_inclusive() {
    // identity measurements make x_det equal to y on T_det
    let a = MeasurementMatrix::from_unit_columns(nalgebra::DMatrix::identity(3, 3)).unwrap();
    let y = DVector::from_vec(vec![1.0, 0.1, 0.0]);
    let prev = SupportSet::new(3, [0, 1]).unwrap();
    let f = LsCsFilter::new(FilterConfig::new(0.01, 0.5, 0.1)).unwrap();
    let (next, d) = f.step(&state(&prev), &a, &y, None).unwrap();
    assert_eq!(d.deleted.as_slice(), &[1]);
    assert_eq!(next.support.as_slice(), &[0]);
    assert!(d.truth.is_none());
}

#[test]
fn simple_cs_of_zero_is_empty() {
    let a = MeasurementMatrix::gaussian(10, 20, 1).unwrap();
    let r = simple_cs(&a, &DVector::zeros(10), 0.1, 0.05, 1e8).unwrap();
    assert!(r.support.is_empty());
    assert_eq!(r.x_hat.norm_sq(), 0.0);
}

#[test]
fn genie_ls_error_matches_noise_covariance() {
    // E||x - x_hat||^2 = sigma^2 trace((A_N' A_N)^-1) for Gaussian noise
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = MeasurementMatrix::gaussian_with_rng(40, 80, &mut rng).unwrap();
    let support = SupportSet::new(80, [3, 17, 29, 41, 66]).unwrap();
    let x = SignalVector::from_support(&support, &[1.0, -2.0, 0.5, 1.5, -1.0]).unwrap();
    let sigma = 0.1;
    let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
    let trials = 4000;
    let mut total = 0.0;
    for _ in 0..trials {
        let w = DVector::from_fn(40, |_, _| rng.sample(normal));
        let y = a.apply(x.as_dvector()).unwrap() + w;
        total += genie_ls(&a, &support, &y).unwrap().sq_dist(&x);
    }
    let a_n = a.columns(&support).unwrap();
    let inv = (a_n.transpose() * &a_n).try_inverse().unwrap();
    let expected = sigma * sigma * inv.trace();
    let mean = total / trials as f64;
    assert!((mean - expected).abs() < 0.05 * expected, "{mean} vs {expected}");
}
