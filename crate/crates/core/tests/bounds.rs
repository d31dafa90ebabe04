use lscs::bounds::{c2_c3_from, fact5, BoundContext, Theorem2Inputs};
use lscs::measurement::{MeasurementMatrix, RipEntry, RipEstimator, RipMode, RipTable};
use lscs::sigmodel::{Rates, SignalModelParams};
use proptest::prelude::*;

/// Monotone synthetic table: `delta_s` grows by the given increments and
/// `theta_{s,s'} = kappa * delta_{s+s'}`.
fn synthetic_table(m: usize, increments: &[f64], kappa: f64) -> RipTable {
    let mut t = RipTable::new("synthetic", m);
    let mut d = vec![0.0; m + 1];
    for s in 1..=m {
        d[s] = d[s - 1] + increments[(s - 1) % increments.len()];
        t.insert_delta(s, RipEntry::exact(d[s]));
    }
    for s in 0..=m {
        for sp in 0..=m - s {
            if s > 0 || sp > 0 {
                t.insert_theta(s, sp, RipEntry::exact(kappa * d[s + sp]));
            }
        }
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn constants_increase_with_rip(d in 0.0f64..0.45, th in 0.0f64..0.45, e in 0.0f64..0.05) {
        let (c2, c3) = c2_c3_from(d, th).unwrap();
        let (c2d, c3d) = c2_c3_from(d + e, th).unwrap();
        let (c2t, c3t) = c2_c3_from(d, th + e).unwrap();
        prop_assert!(c2d >= c2 && c3d >= c3);
        prop_assert!(c2t >= c2 && c3t >= c3);
        prop_assert!(c2 >= 48.0 && c3 >= 8.0);
    }

    #[test]
    fn corollary1_dominates_theorem1(
        inc in prop::collection::vec(0.001f64..0.03, 1..4),
        kappa in 0.5f64..1.0,
        size_t in 1usize..6,
        x_delta in prop::collection::vec(0.1f64..3.0, 1..3),
        w_frac in 0.0f64..1.0,
    ) {
        let mut table = synthetic_table(60, &inc, kappa);
        let (n, lambda, norm_a1) = (40, 0.1, 5.0);
        let mut ctx = BoundContext::new(&mut table, n, lambda, norm_a1, 0.0).unwrap();
        let w_sq = w_frac * ctx.noise_term();
        let x_sq: f64 = x_delta.iter().map(|v| v * v).sum();
        let th = ctx.thresholds().unwrap();
        prop_assume!(size_t <= th.s_star && x_delta.len() <= th.s_star_star);
        let t1 = ctx.theorem1(size_t, &x_delta, w_sq).unwrap();
        let c1 = ctx.corollary1(size_t, x_delta.len(), x_sq).unwrap();
        prop_assert!(t1.value <= c1.bound * (1.0 + 1e-12));
        let f = ctx.f_csres(x_delta.len(), size_t, &x_delta, ctx.noise_term()).unwrap();
        prop_assert!(f <= c1.bound * (1.0 + 1e-12));
        if x_delta.len() == 1 {
            prop_assert!((f - c1.bound).abs() <= 1e-9 * c1.bound);
        }
    }

    #[test]
    fn detection_threshold_grows_with_alpha(
        inc in prop::collection::vec(0.001f64..0.02, 1..3),
        alpha in 0.0f64..1.0,
    ) {
        let mut table = synthetic_table(60, &inc, 0.7);
        let mut ctx = BoundContext::new(&mut table, 40, 0.1, 5.0, 0.0).unwrap();
        let th = ctx.thresholds().unwrap();
        prop_assume!(th.s_star >= 2 && th.s_star_star >= 1);
        let lo = ctx.lemma_detection(2, 1, alpha).unwrap();
        let hi = ctx.lemma_detection(2, 1, alpha + 0.1).unwrap();
        prop_assume!(lo.holds);
        prop_assert!(hi.threshold_sq > lo.threshold_sq);
    }

    #[test]
    fn detected_bound_is_monotone(inc in prop::collection::vec(0.001f64..0.03, 1..4), linf in 0.1f64..3.0) {
        let mut table = synthetic_table(60, &inc, 0.8);
        let mut ctx = BoundContext::new(&mut table, 40, 0.1, 5.0, 0.0).unwrap();
        let th = ctx.thresholds().unwrap();
        prop_assume!(th.s_star >= 1);
        prop_assert!(fact5(&mut ctx, th.s_star.min(20), 4, linf).unwrap());
    }
}

fn stability_model(d: usize) -> SignalModelParams {
    SignalModelParams {
        m: 60,
        s0: 6,
        sa: 2,
        d,
        r: 2,
        magnitude: 50.0,
        rates: Rates::Split {
            first: 10.0,
            second: 5.0,
        },
        horizon: 40,
    }
}

#[test]
fn min_d0_is_minimal() {
    let mut table = synthetic_table(60, &[0.002], 0.02);
    let mut ctx = BoundContext::new(&mut table, 40, 0.05, 5.0, 0.0).unwrap();
    let model = stability_model(20);
    let r = ctx.find_min_d0(&model, 1, 12.0, None).unwrap().expect("some d0 works");
    assert!(r.all_hold);
    assert_eq!(r.d0, 3);
    for d0 in 1..r.d0 {
        let inp = Theorem2Inputs {
            f: 1,
            d0,
            alpha: 12.0,
            alpha_del: None,
        };
        assert!(!ctx.theorem2_check(&model, &inp).unwrap().all_hold);
    }
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"4b.1\""));
}

#[test]
fn noise_outside_budget_fails_condition() {
    let mut table = synthetic_table(60, &[0.004], 0.6);
    let mut ctx = BoundContext::new(&mut table, 40, 0.05, 5.0, 1.0).unwrap();
    let r = ctx
        .theorem2_check(
            &stability_model(20),
            &Theorem2Inputs {
                f: 0,
                d0: 3,
                alpha: 0.2,
                alpha_del: None,
            },
        )
        .unwrap();
    assert!(r.failing().contains(&"3a.noise"));
}

#[test]
fn sampled_rip_marks_results_optimistic() {
    let a = MeasurementMatrix::gaussian(12, 16, 3).unwrap();
    let mut est = RipEstimator::new(&a, RipMode::Sampled { trials: 30, seed: 1 });
    let mut ctx = BoundContext::new(&mut est, 12, 0.1, a.one_norm(), 0.0).unwrap();
    let b = ctx.cs_bound(&[]);
    match b {
        Ok(b) => assert!(b.optimistic),
        Err(e) => assert!(e.to_string().contains("S**")),
    }
}

#[test]
fn zero_signal_cs_bound_uses_only_first_term() {
    let mut table = synthetic_table(30, &[0.01], 0.7);
    let lambda = 0.2;
    let mut ctx = BoundContext::new(&mut table, 10, lambda, 3.0, 0.0).unwrap();
    let th = ctx.thresholds().unwrap();
    let b = ctx.cs_bound(&[]).unwrap();
    let want = (1..=th.s_star_star)
        .map(|s| ctx.c2_c3(s).unwrap().0 * s as f64 * lambda * lambda)
        .fold(f64::INFINITY, f64::min);
    assert!((b.value - want).abs() < 1e-12);
}
