//! Error bounds for CS-residual and LS-CS, the stability conditions, and
//! runtime predicates that check the guarantees on simulated steps.
//!
//! Every bound reads restricted isometry constants through a [`RipSource`].
//! Results carry an `optimistic` flag whenever a sampled (lower-bound) RIP
//! value was involved, since soundness is only guaranteed for exact values.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::StepDiagnostics;
use crate::measurement::{RipError, RipSource, Thresholds};
use crate::sigmodel::SignalModelParams;
use crate::support::{SignalVector, SupportSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("bound not applicable: {0}")]
    NotApplicable(String),
    #[error("constant undefined: {0}")]
    Undefined(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Rip(#[from] RipError),
}

/// `(C2, C3)` from `delta_2S` and `theta_{S,2S}`.
pub fn c2_c3_from(delta_2s: f64, theta: f64) -> Result<(f64, f64), BoundError> {
    let den = 1.0 - delta_2s - theta;
    if !(den > 0.0) {
        return Err(BoundError::Undefined(format!(
            "1 - delta_2S - theta_S,2S = {den} is not positive"
        )));
    }
    let d2 = den * den;
    Ok((48.0 / d2, 8.0 + 24.0 * theta * theta / d2))
}

/// Upper bound on `||beta_T||^2` for the least-squares error on `T`.
pub fn beta_t_norm_bound(
    theta: f64,
    delta_t: f64,
    x_delta_sq: f64,
    w_sq: f64,
) -> Result<f64, BoundError> {
    if !(delta_t < 1.0) {
        return Err(BoundError::Undefined(format!("delta_T = {delta_t} >= 1")));
    }
    let g = 1.0 - delta_t;
    Ok(2.0 * theta * theta / (g * g) * x_delta_sq + 2.0 / g * w_sq)
}

/// A bound value, the minimizing sparsity level when there is one, and
/// whether sampled RIP values went into it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub argmin: Option<usize>,
    pub optimistic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corollary1 {
    pub bound: f64,
    pub c_prime: f64,
    pub c_dprime: f64,
    pub theta: f64,
    pub optimistic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionThreshold {
    /// Whether `2 theta^2 |Delta| C'' < 1` for every enumerated pair.
    pub holds: bool,
    /// Largest value of `2 theta^2 |Delta| C''` over the enumeration.
    pub max_gate: f64,
    /// Squared magnitude above which the largest undetected coefficient is
    /// detected; infinite when `holds` is false.
    pub threshold_sq: f64,
    pub optimistic: bool,
}

/// Bound evaluation for one measurement matrix and noise level.
pub struct BoundContext<'a> {
    rip: &'a mut dyn RipSource,
    n: usize,
    lambda: f64,
    norm_a1: f64,
    noise_linf: f64,
    sampled: bool,
    cached: Option<(Thresholds, bool)>,
}

impl<'a> BoundContext<'a> {
    pub fn new(
        rip: &'a mut dyn RipSource,
        n: usize,
        lambda: f64,
        norm_a1: f64,
        noise_linf: f64,
    ) -> Result<Self, BoundError> {
        if n == 0 || !(lambda > 0.0) || !(norm_a1 > 0.0) || !(noise_linf >= 0.0) {
            return Err(BoundError::InvalidInput(format!(
                "need n > 0, lambda > 0, ||A||_1 > 0, noise >= 0 (n={n}, lambda={lambda}, ||A||_1={norm_a1}, noise={noise_linf})"
            )));
        }
        Ok(Self {
            rip,
            n,
            lambda,
            norm_a1,
            noise_linf,
            sampled: false,
            cached: None,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `n lambda^2 / ||A||_1^2`, the largest possible `||w||^2`.
    pub fn noise_term(&self) -> f64 {
        self.n as f64 * self.lambda * self.lambda / (self.norm_a1 * self.norm_a1)
    }

    /// Whether `||w||_inf <= lambda / ||A||_1`.
    pub fn noise_budget_ok(&self) -> bool {
        self.noise_linf <= self.lambda / self.norm_a1
    }

    fn require_noise(&self) -> Result<(), BoundError> {
        if self.noise_budget_ok() {
            Ok(())
        } else {
            Err(BoundError::NotApplicable(format!(
                "||w||_inf = {} exceeds lambda/||A||_1 = {}",
                self.noise_linf,
                self.lambda / self.norm_a1
            )))
        }
    }

    fn delta(&mut self, s: usize) -> Result<f64, BoundError> {
        let e = self.rip.delta(s)?;
        self.sampled |= !e.is_exact();
        Ok(e.value)
    }

    fn theta(&mut self, s: usize, s_prime: usize) -> Result<f64, BoundError> {
        let e = self.rip.theta(s, s_prime)?;
        self.sampled |= !e.is_exact();
        Ok(e.value)
    }

    fn tracked<T>(
        &mut self,
        f: impl FnOnce(&mut Self) -> Result<T, BoundError>,
    ) -> Result<(T, bool), BoundError> {
        let outer = std::mem::replace(&mut self.sampled, false);
        let r = f(self);
        let used = self.sampled;
        self.sampled = outer || used;
        r.map(|v| (v, used))
    }

    /// `S*` and `S**`, scanning until the first failing level.
    pub fn thresholds(&mut self) -> Result<Thresholds, BoundError> {
        if let Some((th, sampled)) = self.cached {
            self.sampled |= sampled;
            return Ok(th);
        }
        let (th, sampled) = self.tracked(|ctx| {
            let m = ctx.rip.m();
            let mut s_star = 0;
            for s in 1..=m {
                if ctx.delta(s)? < 0.5 {
                    s_star = s;
                } else {
                    break;
                }
            }
            let mut s_star_star = 0;
            for s in 1..=m / 3 {
                if ctx.delta(2 * s)? + ctx.theta(s, 2 * s)? < 1.0 {
                    s_star_star = s;
                } else {
                    break;
                }
            }
            Ok(Thresholds {
                s_star,
                s_star_star,
            })
        })?;
        self.cached = Some((th, sampled));
        Ok(th)
    }

    pub fn c2_c3(&mut self, s: usize) -> Result<(f64, f64), BoundError> {
        let d = self.delta(2 * s)?;
        let t = self.theta(s, 2 * s)?;
        c2_c3_from(d, t)
    }

    /// `C'(|T|, |Delta|)` and `C''(|T|, |Delta|)`; needs `|Delta| > 0`.
    pub fn c_prime_dprime(&mut self, size_t: usize, size_delta: usize) -> Result<(f64, f64), BoundError> {
        if size_delta == 0 {
            return Err(BoundError::InvalidInput("C' needs |Delta| > 0".into()));
        }
        let (c2, c3) = self.c2_c3(size_delta)?;
        let d = size_delta as f64;
        let t = size_t as f64;
        let cp = c2 * d * self.lambda * self.lambda + 4.0 * c3 * (t / d) * self.noise_term();
        let cpp = 8.0 * c3 * t;
        Ok((cp, cpp))
    }

    fn check_t(&mut self, size_t: usize) -> Result<Thresholds, BoundError> {
        let th = self.thresholds()?;
        if size_t > th.s_star {
            return Err(BoundError::NotApplicable(format!(
                "|T| = {size_t} exceeds S* = {}",
                th.s_star
            )));
        }
        Ok(th)
    }

    /// `F_CSres(S)` for a single `S`.
    pub fn f_csres(
        &mut self,
        s: usize,
        size_t: usize,
        x_delta: &[f64],
        w_sq: f64,
    ) -> Result<f64, BoundError> {
        if s == 0 {
            return Err(BoundError::InvalidInput("S must be positive".into()));
        }
        let theta = self.theta(size_t, x_delta.len())?;
        self.f_csres_inner(s, size_t, x_delta, theta, w_sq)
    }

    fn f_csres_inner(
        &mut self,
        s: usize,
        size_t: usize,
        x_delta: &[f64],
        theta: f64,
        w_sq: f64,
    ) -> Result<f64, BoundError> {
        let (c2, c3) = self.c2_c3(s)?;
        let sd = x_delta.len();
        let x_sq: f64 = x_delta.iter().map(|v| v * v).sum();
        let mut b = 8.0 * theta * theta * x_sq + 4.0 * w_sq;
        if s < sd {
            b += smallest_energy(x_delta, sd - s);
        }
        let sf = s as f64;
        let rest = (size_t + sd) as f64 - sf;
        Ok(c2 * sf * self.lambda * self.lambda + c3 * rest / sf * b)
    }

    /// Bound on `||beta_T||^2` for `|T| = size_t`, `|Delta| = size_delta`.
    pub fn beta_t_bound(
        &mut self,
        size_t: usize,
        size_delta: usize,
        x_delta_sq: f64,
        w_sq: f64,
    ) -> Result<Bound, BoundError> {
        let (v, optimistic) = self.tracked(|ctx| {
            let theta = ctx.theta(size_t, size_delta)?;
            let delta = ctx.delta(size_t)?;
            beta_t_norm_bound(theta, delta, x_delta_sq, w_sq)
        })?;
        Ok(Bound {
            value: v,
            argmin: None,
            optimistic,
        })
    }

    /// Minimum of `F_CSres(S)` over `1 <= S <= min(S**, |T| + |Delta|)`.
    pub fn theorem1(&mut self, size_t: usize, x_delta: &[f64], w_sq: f64) -> Result<Bound, BoundError> {
        let (b, optimistic) = self.tracked(|ctx| {
            ctx.require_noise()?;
            let th = ctx.check_t(size_t)?;
            let smax = th.s_star_star.min(size_t + x_delta.len());
            if smax == 0 {
                return Err(BoundError::NotApplicable("no admissible S (S** = 0 or empty support)".into()));
            }
            let theta = ctx.theta(size_t, x_delta.len())?;
            let mut best = (f64::INFINITY, 0);
            for s in 1..=smax {
                let f = ctx.f_csres_inner(s, size_t, x_delta, theta, w_sq)?;
                if f < best.0 {
                    best = (f, s);
                }
            }
            Ok(best)
        })?;
        Ok(Bound {
            value: b.0,
            argmin: Some(b.1),
            optimistic,
        })
    }

    fn check_t_delta(&mut self, size_t: usize, size_delta: usize) -> Result<(), BoundError> {
        self.require_noise()?;
        let th = self.check_t(size_t)?;
        if size_delta > th.s_star_star {
            return Err(BoundError::NotApplicable(format!(
                "|Delta| = {size_delta} exceeds S** = {}",
                th.s_star_star
            )));
        }
        Ok(())
    }

    /// `C' + C'' theta^2 ||x_Delta||^2`; needs `|Delta| > 0`.
    pub fn corollary1(
        &mut self,
        size_t: usize,
        size_delta: usize,
        x_delta_sq: f64,
    ) -> Result<Corollary1, BoundError> {
        if size_delta == 0 {
            return Err(BoundError::InvalidInput(
                "|Delta| = 0 uses the B0 branch".into(),
            ));
        }
        let ((c_prime, c_dprime, theta), optimistic) = self.tracked(|ctx| {
            ctx.check_t_delta(size_t, size_delta)?;
            let (cp, cpp) = ctx.c_prime_dprime(size_t, size_delta)?;
            let theta = ctx.theta(size_t, size_delta)?;
            Ok((cp, cpp, theta))
        })?;
        Ok(Corollary1 {
            bound: c_prime + c_dprime * theta * theta * x_delta_sq,
            c_prime,
            c_dprime,
            theta,
            optimistic,
        })
    }

    /// Bound for `|Delta| = 0`, minimized over `1 <= S <= S**`. The factor
    /// `|T| - S` is clamped at zero once `S` exceeds the support size.
    pub fn corollary1_b0(&mut self, size_t: usize) -> Result<Bound, BoundError> {
        let (b, optimistic) = self.tracked(|ctx| {
            ctx.require_noise()?;
            let th = ctx.check_t(size_t)?;
            if th.s_star_star == 0 {
                return Err(BoundError::NotApplicable("S** = 0".into()));
            }
            let noise = 4.0 * ctx.noise_term();
            let mut best = (f64::INFINITY, 0);
            for s in 1..=th.s_star_star {
                let (c2, c3) = ctx.c2_c3(s)?;
                let sf = s as f64;
                let rest = (size_t as f64 - sf).max(0.0);
                let f = c2 * sf * ctx.lambda * ctx.lambda + c3 * rest / sf * noise;
                if f < best.0 {
                    best = (f, s);
                }
            }
            Ok(best)
        })?;
        Ok(Bound {
            value: b.0,
            argmin: Some(b.1),
            optimistic,
        })
    }

    /// Dantzig selector error bound for a signal with values `x_n` on its
    /// support, minimized over `1 <= S <= S**`.
    pub fn cs_bound(&mut self, x_n: &[f64]) -> Result<Bound, BoundError> {
        let (b, optimistic) = self.tracked(|ctx| {
            ctx.require_noise()?;
            let th = ctx.thresholds()?;
            if th.s_star_star == 0 {
                return Err(BoundError::NotApplicable("S** = 0".into()));
            }
            let k = x_n.len();
            let mut best = (f64::INFINITY, 0);
            for s in 1..=th.s_star_star {
                let (c2, c3) = ctx.c2_c3(s)?;
                let sf = s as f64;
                let tail = if s < k {
                    (k - s) as f64 / sf * smallest_energy(x_n, k - s)
                } else {
                    0.0
                };
                let f = c2 * sf * ctx.lambda * ctx.lambda + c3 * tail;
                if f < best.0 {
                    best = (f, s);
                }
            }
            Ok(best)
        })?;
        Ok(Bound {
            value: b.0,
            argmin: Some(b.1),
            optimistic,
        })
    }

    /// Bound using `||beta_T||_1 <= b ||x_Delta||_1`; falls back to `B0`
    /// when `|Delta| = 0`.
    pub fn corollary2(
        &mut self,
        size_t: usize,
        size_delta: usize,
        x_delta_sq: f64,
        b: f64,
    ) -> Result<Bound, BoundError> {
        if size_delta == 0 {
            return self.corollary1_b0(size_t);
        }
        let (v, optimistic) = self.tracked(|ctx| {
            ctx.check_t_delta(size_t, size_delta)?;
            let (c2, c3) = ctx.c2_c3(size_delta)?;
            let theta = ctx.theta(size_t, size_delta)?;
            let t = size_t as f64;
            let first = b * b * x_delta_sq;
            let second = 8.0 * t * theta * theta * x_delta_sq + 4.0 * t * ctx.noise_term();
            Ok(c2 * size_delta as f64 * ctx.lambda * ctx.lambda + c3 * first.min(second))
        })?;
        Ok(Bound {
            value: v,
            argmin: Some(size_delta),
            optimistic,
        })
    }

    /// Detection guarantee for the largest undetected coefficient, maximized
    /// over every `|T| <= S_T`, `1 <= |Delta| <= S_Delta`.
    pub fn lemma_detection(
        &mut self,
        s_t: usize,
        s_delta: usize,
        alpha: f64,
    ) -> Result<DetectionThreshold, BoundError> {
        let ((holds, max_gate, thr), optimistic) = self.tracked(|ctx| {
            ctx.require_noise()?;
            ctx.check_t_delta(s_t, s_delta)?;
            ctx.detection_max(s_t, s_delta, alpha)
        })?;
        Ok(DetectionThreshold {
            holds,
            max_gate,
            threshold_sq: thr,
            optimistic,
        })
    }

    fn detection_max(
        &mut self,
        s_t: usize,
        s_delta: usize,
        alpha: f64,
    ) -> Result<(bool, f64, f64), BoundError> {
        let mut max_gate: f64 = 0.0;
        let mut thr: f64 = 0.0;
        for t in 0..=s_t {
            for d in 1..=s_delta {
                let (cp, cpp) = self.c_prime_dprime(t, d)?;
                let theta = self.theta(t, d)?;
                let gate = 2.0 * theta * theta * d as f64 * cpp;
                max_gate = max_gate.max(gate);
                if gate < 1.0 {
                    thr = thr.max((2.0 * alpha * alpha + 2.0 * cp) / (1.0 - gate));
                }
            }
        }
        let holds = max_gate < 1.0;
        Ok((holds, max_gate, if holds { thr } else { f64::INFINITY }))
    }

    /// Squared magnitude above which a detected true coefficient survives
    /// deletion.
    pub fn lemma_no_false_deletion(
        &mut self,
        s_t: usize,
        s_delta: usize,
        det_misses: usize,
        det_misses_linf: f64,
        alpha_del: f64,
    ) -> Result<Bound, BoundError> {
        let (v, optimistic) = self.tracked(|ctx| {
            ctx.require_noise()?;
            ctx.check_t(s_t)?;
            let theta = ctx.theta(s_t, s_delta)?;
            Ok(2.0 * alpha_del * alpha_del
                + 8.0 * ctx.noise_term()
                + 16.0 * theta * theta * det_misses as f64 * det_misses_linf * det_misses_linf)
        })?;
        Ok(Bound {
            value: v,
            argmin: None,
            optimistic,
        })
    }

    /// Smallest `alpha_del^2` that guarantees every false detection is deleted.
    pub fn lemma_deletion(
        &mut self,
        s_t: usize,
        s_delta: usize,
        det_misses: usize,
        det_misses_linf: f64,
    ) -> Result<Bound, BoundError> {
        let (v, optimistic) = self.tracked(|ctx| {
            ctx.require_noise()?;
            ctx.check_t(s_t)?;
            let theta = ctx.theta(s_t, s_delta)?;
            Ok(4.0 * ctx.noise_term()
                + 8.0 * theta * theta * det_misses as f64 * det_misses_linf * det_misses_linf)
        })?;
        Ok(Bound {
            value: v,
            argmin: None,
            optimistic,
        })
    }

    /// Bound on the least-squares error over the detected support.
    pub fn detected_ls_bound(
        &mut self,
        size_t_det: usize,
        det_misses: usize,
        det_misses_sq: f64,
    ) -> Result<Bound, BoundError> {
        let (v, optimistic) = self.tracked(|ctx| {
            ctx.require_noise()?;
            ctx.check_t(size_t_det)?;
            let theta = ctx.theta(size_t_det, det_misses)?;
            Ok(4.0 * ctx.noise_term() + 8.0 * theta * theta * det_misses_sq)
        })?;
        Ok(Bound {
            value: v,
            argmin: None,
            optimistic,
        })
    }

    /// Evaluates the seven stability conditions for one `(f, d0)`.
    pub fn theorem2_check(
        &mut self,
        model: &SignalModelParams,
        inputs: &Theorem2Inputs,
    ) -> Result<ConditionReport, BoundError> {
        model
            .validate()
            .map_err(|e| BoundError::InvalidInput(e.to_string()))?;
        let (conditions, optimistic) = self.tracked(|ctx| ctx.conditions(model, inputs))?;
        let all_hold = conditions.iter().all(|c| c.holds);
        Ok(ConditionReport {
            f: inputs.f,
            d0: inputs.d0,
            alpha: inputs.alpha,
            alpha_del: inputs.alpha_del_or_default(self),
            conditions,
            all_hold,
            optimistic,
        })
    }

    fn conditions(
        &mut self,
        p: &SignalModelParams,
        inp: &Theorem2Inputs,
    ) -> Result<Vec<ConditionResult>, BoundError> {
        let th = self.thresholds()?;
        let (f, d0, sa, s0) = (inp.f, inp.d0, p.sa, p.s0);
        let lam = self.lambda;
        let noise = self.noise_term();
        let alpha = inp.alpha;
        let alpha_del = inp.alpha_del_or_default(self);
        let rates = p.rates.to_vec(p.m);
        let a_min = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let a_max = rates.iter().copied().fold(0.0, f64::max);
        let mm = p.magnitude;
        let mut out = Vec::new();

        out.push(ConditionResult::new("1", Relation::Eq, 0.0, 0.0).note(
            "initial support estimate taken equal to the true initial support",
        ));
        let needed = 2.0 * (self.n as f64).sqrt() * lam / self.norm_a1;
        out.push(
            ConditionResult::new("2", Relation::Ge, alpha_del, needed)
                .note("alpha_del against 2 sqrt(n) lambda / ||A||_1; f is an input"),
        );
        out.push(ConditionResult::new(
            "3a.noise",
            Relation::Le,
            self.noise_linf,
            lam / self.norm_a1,
        ));
        out.push(ConditionResult::new(
            "3a.sa",
            Relation::Le,
            sa as f64,
            th.s_star_star as f64,
        ));
        let s_t_full = s0 + f * (d0 + sa);
        out.push(
            ConditionResult::new("3a.support", Relation::Le, s_t_full as f64, th.s_star as f64)
                .sizes(s_t_full, sa),
        );

        // 3b
        let theta = self.theta(s_t_full, sa)?;
        let c3 = self.c2_c3(sa)?.1;
        let cpp = 8.0 * c3 * s_t_full as f64;
        let lhs = 2.0 * theta * theta * sa as f64 * cpp;
        let mut c = ConditionResult::new("3b", Relation::Lt, lhs, 1.0).sizes(s_t_full, sa);
        c.theta = Some(theta);
        c.c_dprime = Some(cpp);
        out.push(c);

        let tuples = addition_rate_tuples(&rates, sa);
        for i in 1..=sa {
            // 4a
            let s_t = s0 + f * (d0 + i - 1);
            let s_d = sa - i + 1;
            let (ok, gate, thr) = self.detection_max(s_t, s_d, alpha)?;
            let lhs = tuples
                .iter()
                .map(|v| mm.min((d0 + i) as f64 * v[i - 1]).powi(2))
                .fold(f64::INFINITY, f64::min);
            let mut c = ConditionResult::new(&format!("4a.{i}"), Relation::Gt, lhs, thr).sizes(s_t, s_d);
            if !ok {
                c = c.note(&format!("denominator gate {gate} >= 1"));
            }
            out.push(c);

            // 4b, worst case over the achievable addition sets
            let s_t = s0 + f * (d0 + i);
            let s_d = sa - i;
            let theta = self.theta(s_t, s_d)?;
            let mut worst: Option<(f64, f64)> = None;
            for v in &tuples {
                let lhs = mm.min((d0 + i) as f64 * v[i - 1]).powi(2);
                let next = if i < sa { v[i] } else { 0.0 };
                let rhs = 2.0 * alpha_del * alpha_del
                    + 8.0 * noise
                    + 16.0 * theta * theta * (sa - i) as f64 * mm.min((d0 + i) as f64 * next).powi(2);
                if worst.is_none_or(|(l, r)| lhs - rhs < l - r) {
                    worst = Some((lhs, rhs));
                }
            }
            let (lhs, rhs) = worst.unwrap_or((f64::INFINITY, 0.0));
            let mut c = ConditionResult::new(&format!("4b.{i}"), Relation::Gt, lhs, rhs).sizes(s_t, s_d);
            c.theta = Some(theta);
            out.push(c);
        }

        // 5
        let plateau_min = mm.min(d_f(p) * a_min).powi(2);
        let peak = mm.min((d0 + sa) as f64 * a_max).powi(2);
        let theta = self.theta(s_t_full, sa)?;
        let rhs = 2.0 * alpha_del * alpha_del + 8.0 * noise + 16.0 * theta * theta * sa as f64 * peak;
        let mut c = ConditionResult::new("5", Relation::Gt, plateau_min, rhs).sizes(s_t_full, sa);
        c.theta = Some(theta);
        out.push(c);

        // 6
        let r2 = (p.r * p.r) as f64;
        out.push(ConditionResult::new(
            "6",
            Relation::Gt,
            plateau_min,
            r2 * (2.0 * alpha_del * alpha_del + 4.0 * noise),
        ));

        // 7
        out.push(ConditionResult::new(
            "7",
            Relation::Ge,
            p.d as f64,
            (d0 + sa + p.r) as f64,
        ));
        Ok(out)
    }

    /// Smallest `d0` in `1..d` for which every condition holds.
    pub fn find_min_d0(
        &mut self,
        model: &SignalModelParams,
        f: usize,
        alpha: f64,
        alpha_del: Option<f64>,
    ) -> Result<Option<ConditionReport>, BoundError> {
        for d0 in 1..model.d {
            let inputs = Theorem2Inputs {
                f,
                d0,
                alpha,
                alpha_del,
            };
            match self.theorem2_check(model, &inputs) {
                Ok(r) if r.all_hold => return Ok(Some(r)),
                Ok(_) => {}
                Err(BoundError::Rip(RipError::SizeTooLarge { .. }))
                | Err(BoundError::Rip(RipError::BudgetExceeded { .. })) => {}
                Err(BoundError::Undefined(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(None)
    }

    /// Per-step error caps implied by the stability conditions.
    pub fn stability_caps(
        &mut self,
        model: &SignalModelParams,
        inputs: &Theorem2Inputs,
    ) -> Result<StabilityCaps, BoundError> {
        let report = self.theorem2_check(model, inputs)?;
        if !report.all_hold {
            let failed: Vec<_> = report
                .conditions
                .iter()
                .filter(|c| !c.holds)
                .map(|c| c.id.clone())
                .collect();
            return Err(BoundError::NotApplicable(format!(
                "stability conditions fail: {}",
                failed.join(", ")
            )));
        }
        let ((miss, t_cap, csres), optimistic) = self.tracked(|ctx| {
            let rates = model.rates.to_vec(model.m);
            let a_max = rates.iter().copied().fold(0.0, f64::max);
            let sa = model.sa;
            let peak = model
                .magnitude
                .min((inputs.d0 + sa) as f64 * a_max)
                .powi(2);
            let s_t = model.s0 + inputs.f * (inputs.d0 + sa);
            let theta = ctx.theta(s_t, sa)?;
            let miss = sa as f64 * peak;
            let t_cap = 8.0 * theta * theta * sa as f64 * peak + 4.0 * ctx.noise_term();
            let b0 = ctx.corollary1_b0(s_t)?.value;
            let csres = if sa == 0 {
                b0
            } else {
                let (cp, cpp) = ctx.c_prime_dprime(s_t, sa)?;
                b0.max(cp + theta * theta * cpp * sa as f64 * peak)
            };
            Ok((miss, t_cap, csres))
        })?;
        Ok(StabilityCaps {
            miss_err_sq: miss,
            detected_err_sq: t_cap,
            csres_err_sq: csres,
            optimistic,
        })
    }
}

fn d_f(p: &SignalModelParams) -> f64 {
    p.d as f64
}

/// Sum of the `k` smallest squared magnitudes.
fn smallest_energy(values: &[f64], k: usize) -> f64 {
    let mut sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    sq.sort_by(|a, b| a.total_cmp(b));
    sq[..k.min(sq.len())].iter().sum()
}

const MAX_RATE_TUPLES: usize = 200_000;

/// Every achievable sorted (descending) rate vector of an addition set of
/// size `sa`. Falls back to the two extreme vectors when the enumeration is
/// too large, which only makes the worst case more pessimistic.
fn addition_rate_tuples(rates: &[f64], sa: usize) -> Vec<Vec<f64>> {
    let mut distinct: Vec<(f64, usize)> = Vec::new();
    let mut sorted = rates.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    for v in &sorted {
        match distinct.last_mut() {
            Some((x, c)) if *x == *v => *c += 1,
            _ => distinct.push((*v, 1)),
        }
    }
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(sa);
    fn rec(
        distinct: &[(f64, usize)],
        start: usize,
        left: usize,
        cur: &mut Vec<f64>,
        out: &mut Vec<Vec<f64>>,
    ) -> bool {
        if left == 0 {
            out.push(cur.clone());
            return out.len() <= MAX_RATE_TUPLES;
        }
        for k in start..distinct.len() {
            let (v, c) = distinct[k];
            for take in (1..=c.min(left)).rev() {
                for _ in 0..take {
                    cur.push(v);
                }
                let ok = rec(distinct, k + 1, left - take, cur, out);
                cur.truncate(cur.len() - take);
                if !ok {
                    return false;
                }
            }
        }
        true
    }
    if sa == 0 {
        return vec![Vec::new()];
    }
    if rec(&distinct, 0, sa, &mut cur, &mut out) {
        return out;
    }
    // smallest possible i-th largest paired with largest possible (i+1)-th
    let lo: Vec<f64> = sorted[sorted.len() - sa..].to_vec();
    let hi: Vec<f64> = sorted[..sa].to_vec();
    vec![lo, hi]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Inputs {
    /// Assumed false detections per unit time.
    pub f: usize,
    pub d0: usize,
    pub alpha: f64,
    /// Defaults to `2 sqrt(n) lambda / ||A||_1`.
    pub alpha_del: Option<f64>,
}

impl Theorem2Inputs {
    fn alpha_del_or_default(&self, ctx: &BoundContext<'_>) -> f64 {
        self.alpha_del
            .unwrap_or(2.0 * (ctx.n as f64).sqrt() * ctx.lambda / ctx.norm_a1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl Relation {
    pub fn eval(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Relation::Lt => lhs < rhs,
            Relation::Le => lhs <= rhs,
            Relation::Gt => lhs > rhs,
            Relation::Ge => lhs >= rhs,
            Relation::Eq => lhs == rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub id: String,
    pub holds: bool,
    pub lhs: f64,
    pub relation: Relation,
    pub rhs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_delta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_dprime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ConditionResult {
    fn new(id: &str, relation: Relation, lhs: f64, rhs: f64) -> Self {
        Self {
            id: id.to_string(),
            holds: relation.eval(lhs, rhs),
            lhs,
            relation,
            rhs,
            s_t: None,
            s_delta: None,
            theta: None,
            c_dprime: None,
            note: None,
        }
    }

    fn sizes(mut self, s_t: usize, s_delta: usize) -> Self {
        self.s_t = Some(s_t);
        self.s_delta = Some(s_delta);
        self
    }

    fn note(mut self, s: &str) -> Self {
        self.note = Some(s.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub f: usize,
    pub d0: usize,
    pub alpha: f64,
    pub alpha_del: f64,
    pub conditions: Vec<ConditionResult>,
    pub all_hold: bool,
    /// True when any sampled RIP value was used.
    pub optimistic: bool,
}

impl ConditionReport {
    pub fn failing(&self) -> Vec<&str> {
        self.conditions
            .iter()
            .filter(|c| !c.holds)
            .map(|c| c.id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityCaps {
    /// Cap on the squared error over the missed support.
    pub miss_err_sq: f64,
    /// Cap on the squared error over the estimated support.
    pub detected_err_sq: f64,
    /// Cap on the CS-residual squared error.
    pub csres_err_sq: f64,
    pub optimistic: bool,
}

/// Outcome of a guarantee checked on one step: how many times the
/// hypothesis held and where the conclusion failed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FactCheck {
    pub hypotheses: usize,
    pub violations: Vec<usize>,
}

impl FactCheck {
    pub fn merge(&mut self, other: &FactCheck) {
        self.hypotheses += other.hypotheses;
        self.violations.extend_from_slice(&other.violations);
    }
}

fn true_support(x: &SignalVector) -> SupportSet {
    x.support()
}

/// Undetected true coefficients with `x_i^2 > 2 alpha^2 + 2 ||x - x_CSres||^2`
/// are detected. Steps where the addition cap dropped candidates are skipped.
pub fn fact1(diag: &StepDiagnostics, x: &SignalVector, alpha: f64) -> FactCheck {
    let mut out = FactCheck::default();
    if diag.candidates_dropped > 0 {
        return out;
    }
    let thr = 2.0 * alpha * alpha + 2.0 * x.sq_dist(&diag.x_csres);
    for i in true_support(x).iter().filter(|&i| !diag.prev_support.contains(i)) {
        if x.get(i) * x.get(i) > thr {
            out.hypotheses += 1;
            if !diag.t_det.contains(i) {
                out.violations.push(i);
            }
        }
    }
    out
}

fn det_error_sq(diag: &StepDiagnostics, x: &SignalVector) -> f64 {
    x.sub(&diag.x_det).norm_sq_on(&diag.t_det)
}

/// Detected true coefficients with
/// `x_i^2 > 2 alpha_del^2 + 2 ||(x - x_det)_{T_det}||^2` are kept.
pub fn fact2(diag: &StepDiagnostics, x: &SignalVector, alpha_del: f64) -> FactCheck {
    let mut out = FactCheck::default();
    let thr = 2.0 * alpha_del * alpha_del + 2.0 * det_error_sq(diag, x);
    for i in diag.t_det.iter().filter(|&i| x.get(i) != 0.0) {
        if x.get(i) * x.get(i) > thr {
            out.hypotheses += 1;
            if diag.deleted.contains(i) {
                out.violations.push(i);
            }
        }
    }
    out
}

/// When `alpha_del^2 >= ||(x - x_det)_{T_det}||^2`, every false detection
/// is deleted.
pub fn fact3(diag: &StepDiagnostics, x: &SignalVector, alpha_del: f64) -> FactCheck {
    let mut out = FactCheck::default();
    if alpha_del * alpha_del >= det_error_sq(diag, x) {
        out.hypotheses = 1;
        for i in diag.t_det.iter().filter(|&i| x.get(i) == 0.0) {
            if !diag.deleted.contains(i) {
                out.violations.push(i);
            }
        }
    }
    out
}

/// Actual detected-support LS error against its bound, when applicable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fact4 {
    pub actual: f64,
    pub bound: f64,
    pub optimistic: bool,
}

pub fn fact4(
    ctx: &mut BoundContext<'_>,
    diag: &StepDiagnostics,
    x: &SignalVector,
) -> Result<Option<Fact4>, BoundError> {
    let n = true_support(x);
    let misses = n.difference(&diag.t_det).map_err(|e| BoundError::InvalidInput(e.to_string()))?;
    match ctx.detected_ls_bound(diag.t_det.len(), misses.len(), x.norm_sq_on(&misses)) {
        Ok(b) => Ok(Some(Fact4 {
            actual: det_error_sq(diag, x),
            bound: b.value,
            optimistic: b.optimistic,
        })),
        Err(BoundError::NotApplicable(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// The detected-support bound is non-decreasing in both set sizes on the
/// grid `0..=max_t x 0..=max_miss`, with `||x||_inf` fixed.
pub fn fact5(
    ctx: &mut BoundContext<'_>,
    max_t: usize,
    max_miss: usize,
    x_linf: f64,
) -> Result<bool, BoundError> {
    let mut grid = vec![vec![0.0; max_miss + 1]; max_t + 1];
    for (t, row) in grid.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            *cell = ctx
                .detected_ls_bound(t, k, k as f64 * x_linf * x_linf)?
                .value;
        }
    }
    for t in 0..=max_t {
        for k in 0..=max_miss {
            if t > 0 && grid[t][k] < grid[t - 1][k] {
                return Ok(false);
            }
            if k > 0 && grid[t][k] < grid[t][k - 1] {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Result of checking one lemma on one step: `None` when its hypotheses do
/// not hold, otherwise whether the conclusion held.
pub type LemmaOutcome = Option<bool>;

fn applicable<T>(r: Result<T, BoundError>) -> Result<Option<T>, BoundError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(BoundError::NotApplicable(_)) | Err(BoundError::Undefined(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Detection lemma on one step with `S_T = |T|` and `S_Delta = |Delta|`.
pub fn check_lemma_detection(
    ctx: &mut BoundContext<'_>,
    diag: &StepDiagnostics,
    x: &SignalVector,
    alpha: f64,
) -> Result<LemmaOutcome, BoundError> {
    if diag.candidates_dropped > 0 {
        return Ok(None);
    }
    let n = true_support(x);
    let delta = n
        .difference(&diag.prev_support)
        .map_err(|e| BoundError::InvalidInput(e.to_string()))?;
    if delta.is_empty() {
        return Ok(None);
    }
    let Some(det) = applicable(ctx.lemma_detection(diag.prev_support.len(), delta.len(), alpha))? else {
        return Ok(None);
    };
    let order = crate::support::magnitude_order(x, &delta);
    let top = order[0];
    if !(det.holds && x.get(top) * x.get(top) > det.threshold_sq) {
        return Ok(None);
    }
    Ok(Some(diag.t_det.contains(top)))
}

fn det_misses(diag: &StepDiagnostics, x: &SignalVector) -> Result<(usize, f64), BoundError> {
    let miss = true_support(x)
        .difference(&diag.t_det)
        .map_err(|e| BoundError::InvalidInput(e.to_string()))?;
    let linf = miss.iter().map(|i| x.get(i).abs()).fold(0.0, f64::max);
    Ok((miss.len(), linf))
}

/// No-false-deletion lemma with `S_T = |T_det|`, `S_Delta = |Delta_det|`.
pub fn check_lemma_no_false_deletion(
    ctx: &mut BoundContext<'_>,
    diag: &StepDiagnostics,
    x: &SignalVector,
    alpha_del: f64,
) -> Result<LemmaOutcome, BoundError> {
    let (k, linf) = det_misses(diag, x)?;
    let Some(b) = applicable(ctx.lemma_no_false_deletion(diag.t_det.len(), k, k, linf, alpha_del))? else {
        return Ok(None);
    };
    let large: Vec<usize> = diag
        .t_det
        .iter()
        .filter(|&i| x.get(i) * x.get(i) > b.value)
        .collect();
    if large.is_empty() {
        return Ok(None);
    }
    Ok(Some(large.iter().all(|&i| !diag.deleted.contains(i))))
}

/// Deletion lemma with `S_T = |T_det|`, `S_Delta = |Delta_det|`.
pub fn check_lemma_deletion(
    ctx: &mut BoundContext<'_>,
    diag: &StepDiagnostics,
    x: &SignalVector,
    alpha_del: f64,
) -> Result<LemmaOutcome, BoundError> {
    let (k, linf) = det_misses(diag, x)?;
    let Some(b) = applicable(ctx.lemma_deletion(diag.t_det.len(), k, k, linf))? else {
        return Ok(None);
    };
    if alpha_del * alpha_del < b.value {
        return Ok(None);
    }
    Ok(Some(
        diag.t_det
            .iter()
            .filter(|&i| x.get(i) == 0.0)
            .all(|i| diag.deleted.contains(i)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{RipEntry, RipTable};
    use crate::sigmodel::Rates;

    fn zero_table(m: usize) -> RipTable {
        let mut t = RipTable::new("zero", m);
        for s in 1..=m {
            t.insert_delta(s, RipEntry::exact(0.0));
            for sp in 1..=m - s {
                t.insert_theta(s, sp, RipEntry::exact(0.0));
            }
        }
        t
    }

    #[test]
    fn c2_c3_values() {
        assert_eq!(c2_c3_from(0.0, 0.0).unwrap(), (48.0, 8.0));
        let (c2, c3) = c2_c3_from(0.25, 0.25).unwrap();
        assert!((c2 - 192.0).abs() < 1e-12);
        assert!((c3 - 14.0).abs() < 1e-12);
        assert!(c2_c3_from(0.6, 0.4).is_err());
    }

    #[test]
    fn beta_bound_values() {
        assert_eq!(beta_t_norm_bound(0.0, 0.3, 5.0, 0.0).unwrap(), 0.0);
        assert!((beta_t_norm_bound(0.2, 0.5, 1.0, 0.0).unwrap() - 0.32).abs() < 1e-12);
        assert!(beta_t_norm_bound(0.2, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn corollary1_constants() {
        let mut t = zero_table(30);
        // lambda = 1, n = 10, ||A||_1 = 2
        let mut ctx = BoundContext::new(&mut t, 10, 1.0, 2.0, 0.0).unwrap();
        let (cp, cpp) = ctx.c_prime_dprime(5, 1).unwrap();
        assert!((cp - 448.0).abs() < 1e-9);
        assert!((cpp - 320.0).abs() < 1e-9);
        let c = ctx.corollary1(5, 1, 3.0).unwrap();
        assert!((c.bound - 448.0).abs() < 1e-9);
        // equals F_CSres(|Delta|) with ||w||^2 at its maximum
        let f = ctx.f_csres(1, 5, &[3f64.sqrt()], ctx.noise_term()).unwrap();
        assert!((f - c.bound).abs() < 1e-9);
    }

    #[test]
    fn noise_budget_gates_bounds() {
        let mut t = zero_table(12);
        let mut ctx = BoundContext::new(&mut t, 4, 0.1, 2.0, 0.2).unwrap();
        assert!(matches!(ctx.theorem1(2, &[1.0], 0.0), Err(BoundError::NotApplicable(_))));
    }

    #[test]
    fn theorem2_generous_parameters_pass() {
        let mut t = zero_table(60);
        let mut ctx = BoundContext::new(&mut t, 50, 0.01, 7.0, 0.0).unwrap();
        let model = SignalModelParams {
            m: 60,
            s0: 6,
            sa: 2,
            d: 40,
            r: 2,
            magnitude: 100.0,
            rates: Rates::Uniform { value: 20.0 },
            horizon: 50,
        };
        let inp = Theorem2Inputs {
            f: 0,
            d0: 1,
            alpha: 0.1,
            alpha_del: None,
        };
        let r = ctx.theorem2_check(&model, &inp).unwrap();
        assert!(r.all_hold, "{:?}", r.failing());
        assert!(!r.optimistic);
        let caps = ctx.stability_caps(&model, &inp).unwrap();
        assert!((caps.detected_err_sq - 4.0 * ctx.noise_term()).abs() < 1e-15);
    }

    #[test]
    fn condition_seven_limits_d0() {
        let mut t = zero_table(60);
        let mut ctx = BoundContext::new(&mut t, 50, 0.01, 7.0, 0.0).unwrap();
        let model = SignalModelParams {
            m: 60,
            s0: 6,
            sa: 2,
            d: 8,
            r: 2,
            magnitude: 100.0,
            rates: Rates::Uniform { value: 20.0 },
            horizon: 20,
        };
        for d0 in 1..8 {
            let inp = Theorem2Inputs {
                f: 0,
                d0,
                alpha: 0.1,
                alpha_del: None,
            };
            let r = ctx.theorem2_check(&model, &inp).unwrap();
            let c7 = r.conditions.iter().find(|c| c.id == "7").unwrap();
            assert_eq!(c7.holds, d0 <= 4);
        }
    }

    #[test]
    fn only_condition_six_fails_for_long_ramp() {
        let mut t = zero_table(60);
        // noise term n lambda^2 / ||A||_1^2 = 50 * 0.04 / 49
        let mut ctx = BoundContext::new(&mut t, 50, 0.2, 7.0, 0.0).unwrap();
        let model = SignalModelParams {
            m: 60,
            s0: 6,
            sa: 0,
            d: 10,
            r: 9,
            magnitude: 1.0,
            rates: Rates::Uniform { value: 1.0 },
            horizon: 20,
        };
        let inp = Theorem2Inputs {
            f: 0,
            d0: 1,
            alpha: 0.1,
            alpha_del: None,
        };
        let r = ctx.theorem2_check(&model, &inp).unwrap();
        assert_eq!(r.failing(), vec!["6"]);
        let mut short = model.clone();
        short.r = 1;
        assert!(ctx.theorem2_check(&short, &inp).unwrap().all_hold);
    }

    #[test]
    fn rate_tuples_cover_mixed_sets() {
        let rates = vec![0.5, 0.5, 0.25, 0.25, 0.25];
        let t = addition_rate_tuples(&rates, 2);
        assert_eq!(t, vec![vec![0.5, 0.5], vec![0.5, 0.25], vec![0.25, 0.25]]);
    }

    #[test]
    fn detection_threshold_without_coherence() {
        let mut t = zero_table(40);
        let mut ctx = BoundContext::new(&mut t, 20, 0.1, 4.0, 0.0).unwrap();
        let det = ctx.lemma_detection(3, 2, 0.3).unwrap();
        assert!(det.holds);
        let mut max_cp: f64 = 0.0;
        for tt in 0..=3 {
            for d in 1..=2 {
                max_cp = max_cp.max(ctx.c_prime_dprime(tt, d).unwrap().0);
            }
        }
        assert!((det.threshold_sq - (2.0 * 0.09 + 2.0 * max_cp)).abs() < 1e-12);
    }
}
