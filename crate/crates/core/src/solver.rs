//! Dantzig selector and least squares on a support.
//!
//! The Dantzig selector `min ||z||_1 s.t. ||A'(y - Az)||_inf <= lambda` is
//! solved as the linear program `min sum|z_i| s.t. l <= Gz <= u` with
//! `G = A'A`, `c = A'y`, `l = c - lambda`, `u = c + lambda`. A bounded dual
//! simplex runs on that program. Its basis is described by a set `P` of
//! nonzero coefficients (each with a sign) and an equally sized set `Q` of
//! rows sitting at a bound, so every linear solve involves only the small
//! block `G[Q, P]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurement::{MeasurementError, MeasurementMatrix};
use crate::support::{SignalVector, SupportSet};

/// Default cap on the condition number of `A_T' A_T`.
pub const DEFAULT_CONDITION_CAP: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("lambda must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),
    #[error("input contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error("support of size {size} exceeds the {n} available measurements")]
    TooManyColumns { size: usize, n: usize },
    #[error("condition number {kappa:.3e} of A_T'A_T exceeds cap {cap:.3e}")]
    IllConditioned { kappa: f64, cap: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    BudgetExceeded,
}

#[derive(Debug, Clone)]
pub struct DsSolution {
    pub zeta_hat: SignalVector,
    /// `||zeta_hat||_1`.
    pub objective: f64,
    /// `||A'(y - A zeta_hat)||_inf`.
    pub max_correlation: f64,
    /// Dual multipliers on the correlation constraints, scaled so that
    /// `||G mu||_inf <= 1`.
    pub dual: DVector<f64>,
    /// Primal objective minus the dual objective `c'mu - lambda ||mu||_1`.
    pub duality_gap: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl DsSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Dual simplex for the Dantzig selector.
#[derive(Debug, Clone)]
pub struct DantzigSolver {
    /// Pivot limit; `None` means `20 * m + 100`.
    pub max_iterations: Option<usize>,
    /// Relative primal feasibility tolerance.
    pub feasibility_tol: f64,
    /// Reduced-cost tolerance for the ratio test.
    pub optimality_tol: f64,
    /// Smallest admissible pivot magnitude.
    pub pivot_tol: f64,
}

impl Default for DantzigSolver {
    fn default() -> Self {
        Self {
            max_iterations: None,
            feasibility_tol: 1e-11,
            optimality_tol: 1e-10,
            pivot_tol: 1e-9,
        }
    }
}

/// Solves with default settings.
pub fn solve_dantzig(
    a: &MeasurementMatrix,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<DsSolution, SolverError> {
    DantzigSolver::default().solve(a, y, lambda)
}

#[derive(Clone, Copy, PartialEq)]
enum Leaving {
    Coef(usize),
    Row(usize, f64),
}

impl DantzigSolver {
    pub fn solve(
        &self,
        a: &MeasurementMatrix,
        y: &DVector<f64>,
        lambda: f64,
    ) -> Result<DsSolution, SolverError> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite);
        }
        let c = a.apply_transpose(y)?;
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(SolverError::InvalidLambda(lambda));
        }
        if lambda >= c.amax() {
            return Ok(zero_solution(&c));
        }
        self.solve_normal(&a.gram(), &c, lambda)
    }

    /// Solves given `G = A'A` and `c = A'y` directly.
    pub fn solve_normal(
        &self,
        g: &DMatrix<f64>,
        c: &DVector<f64>,
        lambda: f64,
    ) -> Result<DsSolution, SolverError> {
        let m = c.len();
        if g.nrows() != m || g.ncols() != m {
            return Err(MeasurementError::LengthMismatch {
                expected: g.ncols(),
                got: m,
            }
            .into());
        }
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(SolverError::InvalidLambda(lambda));
        }
        if c.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite);
        }
        if lambda >= c.amax() {
            return Ok(zero_solution(c));
        }
        let max_iter = self.max_iterations.unwrap_or(20 * m + 100);
        let scale = c.amax().max(1.0);
        let ftol = self.feasibility_tol * scale;
        let lower = c.map(|v| v - lambda);
        let upper = c.map(|v| v + lambda);
        let fixed_rows = lambda == 0.0;

        // basic coefficients with their signs, and active rows with their sides
        let mut p: Vec<usize> = Vec::new();
        let mut sigma: Vec<f64> = Vec::new();
        let mut q: Vec<usize> = Vec::new();
        let mut tau: Vec<f64> = Vec::new();
        let mut in_p = vec![false; m];
        let mut in_q = vec![false; m];

        let mut status = SolveStatus::BudgetExceeded;
        let mut iterations = 0;
        let mut zeta_p = DVector::zeros(0);
        let mut mu_q = DVector::zeros(0);

        while iterations <= max_iter {
            let k = p.len();
            let blk = DMatrix::from_fn(k, k, |i, j| g[(q[i], p[j])]);
            let blk_t = blk.transpose();
            let lu = blk.lu();
            let lu_t = blk_t.lu();
            let b_q = DVector::from_fn(k, |i, _| if tau[i] > 0.0 { upper[q[i]] } else { lower[q[i]] });
            let sig = DVector::from_column_slice(&sigma);
            let (zp, mq) = if k == 0 {
                (DVector::zeros(0), DVector::zeros(0))
            } else {
                match (lu.solve(&b_q), lu_t.solve(&sig)) {
                    (Some(z), Some(u)) => (z, u),
                    _ => {
                        status = SolveStatus::BudgetExceeded;
                        break;
                    }
                }
            };
            zeta_p = zp;
            mu_q = mq;
            let rows_g = mul_cols(g, &p, &zeta_p);
            let g_mu = mul_cols(g, &q, &mu_q);

            let mut leaving: Option<(Leaving, f64)> = None;
            let mut consider = |cand: Leaving, infeas: f64| {
                if infeas > ftol && leaving.is_none_or(|(_, best)| infeas > best) {
                    leaving = Some((cand, infeas));
                }
            };
            for pos in 0..k {
                consider(Leaving::Coef(pos), -sigma[pos] * zeta_p[pos]);
            }
            for j in 0..m {
                if in_q[j] {
                    continue;
                }
                if rows_g[j] < lower[j] {
                    consider(Leaving::Row(j, -1.0), lower[j] - rows_g[j]);
                } else if rows_g[j] > upper[j] {
                    consider(Leaving::Row(j, 1.0), rows_g[j] - upper[j]);
                }
            }
            let Some((leave, _)) = leaving else {
                status = SolveStatus::Optimal;
                break;
            };
            iterations += 1;

            // row of the tableau for the leaving variable
            let rhs = match leave {
                Leaving::Coef(pos) => {
                    let mut e = DVector::zeros(k);
                    e[pos] = sigma[pos];
                    e
                }
                Leaving::Row(j, _) => DVector::from_fn(k, |i, _| g[(p[i], j)]),
            };
            let rho_q = if k == 0 {
                DVector::zeros(0)
            } else {
                match lu_t.solve(&rhs) {
                    Some(r) => r,
                    None => break,
                }
            };
            let mut g_rho = mul_cols(g, &q, &rho_q);
            if let Leaving::Row(j, _) = leave {
                for i in 0..m {
                    g_rho[i] -= g[(i, j)];
                }
            }
            // leaving towards its lower bound means the dual step has s >= 0
            // and reduced costs move as d + s * alpha
            let to_lower = match leave {
                Leaving::Coef(_) => true,
                Leaving::Row(_, side) => side < 0.0,
            };

            // candidates: (alpha, reduced cost, at_lower, entering)
            let mut cands: Vec<(f64, f64, Entering)> = Vec::new();
            for i in 0..m {
                if in_p[i] {
                    let pos = p.iter().position(|&v| v == i).unwrap_or(0);
                    let alpha = -sigma[pos] * g_rho[i];
                    cands.push((alpha, 1.0 + sigma[pos] * g_mu[i], Entering::Coef(i, -sigma[pos])));
                } else {
                    cands.push((g_rho[i], 1.0 - g_mu[i], Entering::Coef(i, 1.0)));
                    cands.push((-g_rho[i], 1.0 + g_mu[i], Entering::Coef(i, -1.0)));
                }
            }
            if !fixed_rows {
                for (pos, &j) in q.iter().enumerate() {
                    // at lower when tau = -1 (needs mu >= 0), at upper otherwise
                    let d = if tau[pos] < 0.0 { mu_q[pos] } else { -mu_q[pos] };
                    let alpha = -rho_q[pos];
                    let alpha_lower_form = if tau[pos] < 0.0 { alpha } else { -alpha };
                    cands.push((alpha_lower_form, d, Entering::Row(j)));
                }
            }
            // all candidates are now expressed as nonbasic-at-lower with d >= 0;
            // moving towards lower needs alpha < 0, towards upper alpha > 0
            let dir = if to_lower { -1.0 } else { 1.0 };
            let mut bound = f64::INFINITY;
            for &(alpha, d, _) in &cands {
                let a = alpha * dir;
                if a > self.pivot_tol {
                    bound = bound.min((d.max(0.0) + self.optimality_tol) / a);
                }
            }
            if !bound.is_finite() {
                status = SolveStatus::Infeasible;
                break;
            }
            let mut chosen: Option<(f64, Entering)> = None;
            for &(alpha, d, ent) in &cands {
                let a = alpha * dir;
                if a > self.pivot_tol && d.max(0.0) / a <= bound {
                    if chosen.is_none_or(|(best, _)| a > best) {
                        chosen = Some((a, ent));
                    }
                }
            }
            let Some((_, enter)) = chosen else {
                status = SolveStatus::Infeasible;
                break;
            };

            match leave {
                Leaving::Coef(pos) => {
                    in_p[p[pos]] = false;
                    p.remove(pos);
                    sigma.remove(pos);
                }
                Leaving::Row(j, side) => {
                    in_q[j] = true;
                    q.push(j);
                    tau.push(side);
                }
            }
            match enter {
                Entering::Coef(i, s) => {
                    in_p[i] = true;
                    p.push(i);
                    sigma.push(s);
                }
                Entering::Row(j) => {
                    let pos = q.iter().position(|&v| v == j).unwrap_or(0);
                    in_q[j] = false;
                    q.remove(pos);
                    tau.remove(pos);
                }
            }
        }

        let mut zeta = DVector::zeros(m);
        if status == SolveStatus::Optimal {
            for (pos, &i) in p.iter().enumerate() {
                zeta[i] = zeta_p[pos];
            }
        }
        let mut mu = DVector::zeros(m);
        for (pos, &j) in q.iter().enumerate() {
            mu[j] = mu_q[pos];
        }
        Ok(certify(g, c, lambda, zeta, mu, status, iterations))
    }
}

#[derive(Clone, Copy)]
enum Entering {
    Coef(usize, f64),
    Row(usize),
}

fn mul_cols(g: &DMatrix<f64>, cols: &[usize], v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(g.nrows());
    for (pos, &j) in cols.iter().enumerate() {
        out.axpy(v[pos], &g.column(j), 1.0);
    }
    out
}

fn zero_solution(c: &DVector<f64>) -> DsSolution {
    let m = c.len();
    DsSolution {
        zeta_hat: SignalVector::zeros(m),
        objective: 0.0,
        max_correlation: c.amax(),
        dual: DVector::zeros(m),
        duality_gap: 0.0,
        status: SolveStatus::Optimal,
        iterations: 0,
    }
}

fn certify(
    g: &DMatrix<f64>,
    c: &DVector<f64>,
    lambda: f64,
    zeta: DVector<f64>,
    mut mu: DVector<f64>,
    status: SolveStatus,
    iterations: usize,
) -> DsSolution {
    let resid = c - g * &zeta;
    let max_correlation = resid.amax();
    let dual_norm = (g * &mu).amax();
    if dual_norm > 1.0 {
        mu /= dual_norm;
    }
    let objective = zeta.lp_norm(1);
    let dual_obj = c.dot(&mu) - lambda * mu.lp_norm(1);
    DsSolution {
        zeta_hat: SignalVector::from(zeta),
        objective,
        max_correlation,
        dual: mu,
        duality_gap: objective - dual_obj,
        status,
        iterations,
    }
}

/// Condition number of `A_T' A_T`, i.e. the squared ratio of the extreme
/// singular values of `A_T`. Infinite when `A_T` is rank deficient.
pub fn gram_condition_number(a_t: &DMatrix<f64>) -> f64 {
    if a_t.ncols() == 0 {
        return 1.0;
    }
    if a_t.ncols() > a_t.nrows() {
        return f64::INFINITY;
    }
    let sv = a_t.clone().svd(false, false).singular_values;
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if lo <= 0.0 {
        return f64::INFINITY;
    }
    (hi / lo).powi(2)
}

/// Least squares restricted to the columns in `t`; zero elsewhere.
pub fn ls_on_support(
    a: &MeasurementMatrix,
    t: &SupportSet,
    y: &DVector<f64>,
    cond_cap: f64,
) -> Result<SignalVector, SolverError> {
    if y.len() != a.n() {
        return Err(MeasurementError::LengthMismatch {
            expected: a.n(),
            got: y.len(),
        }
        .into());
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite);
    }
    let a_t = a.columns(t)?;
    if t.is_empty() {
        return Ok(SignalVector::zeros(a.m()));
    }
    if t.len() > a.n() {
        return Err(SolverError::TooManyColumns {
            size: t.len(),
            n: a.n(),
        });
    }
    let svd = a_t.svd(true, true);
    let sv = &svd.singular_values;
    let hi = sv.iter().copied().fold(0.0, f64::max);
    let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let kappa = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
    if !(kappa <= cond_cap) {
        return Err(SolverError::IllConditioned {
            kappa,
            cap: cond_cap,
        });
    }
    let (Some(u), Some(vt)) = (&svd.u, &svd.v_t) else {
        return Err(SolverError::NonFinite);
    };
    let coef = u.tr_mul(y).component_div(sv);
    let x_t = vt.tr_mul(&coef);
    Ok(SignalVector::from_support(t, x_t.as_slice()).expect("sizes agree"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_gives_soft_threshold() {
        let a = MeasurementMatrix::from_unit_columns(DMatrix::identity(4, 4)).unwrap();
        let y = DVector::from_vec(vec![1.0, -0.2, 0.5, -3.0]);
        let sol = solve_dantzig(&a, &y, 0.4).unwrap();
        assert!(sol.is_optimal());
        let want = [0.6, 0.0, 0.1, -2.6];
        for (got, w) in sol.zeta_hat.as_slice().iter().zip(want) {
            assert_abs_diff_eq!(*got, w, epsilon = 1e-12);
        }
        assert!(sol.duality_gap.abs() < 1e-12);
    }

    #[test]
    fn large_lambda_returns_zero() {
        let a = MeasurementMatrix::gaussian(5, 8, 1).unwrap();
        let y = DVector::from_fn(5, |i, _| i as f64 - 2.0);
        let lam = a.apply_transpose(&y).unwrap().amax();
        let sol = solve_dantzig(&a, &y, lam).unwrap();
        assert_eq!(sol.zeta_hat.norm_l1(), 0.0);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn invalid_inputs() {
        let a = MeasurementMatrix::gaussian(3, 4, 1).unwrap();
        let y = DVector::zeros(3);
        assert!(matches!(solve_dantzig(&a, &y, -1.0), Err(SolverError::InvalidLambda(_))));
        assert!(solve_dantzig(&a, &DVector::zeros(2), 1.0).is_err());
        let bad = DVector::from_vec(vec![f64::NAN, 0.0, 0.0]);
        assert_eq!(solve_dantzig(&a, &bad, 1.0).unwrap_err(), SolverError::NonFinite);
    }

    #[test]
    fn ls_recovers_exact_signal() {
        let a = MeasurementMatrix::gaussian(20, 40, 9).unwrap();
        let t = SupportSet::new(40, [3, 7, 30]).unwrap();
        let x = SignalVector::from_support(&t, &[1.0, -2.0, 0.5]).unwrap();
        let y = a.apply(x.as_dvector()).unwrap();
        let xh = ls_on_support(&a, &t, &y, DEFAULT_CONDITION_CAP).unwrap();
        assert!(xh.sq_dist(&x) < 1e-20);
    }

    #[test]
    fn ls_rejects_rank_deficient_support() {
        let col = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
        let a = DMatrix::from_column_slice(2, 3, &[col[0], col[1], col[0], col[1], 1.0, 0.0]);
        let a = MeasurementMatrix::from_unit_columns(a).unwrap();
        let t = SupportSet::new(3, [0, 1]).unwrap();
        let y = DVector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            ls_on_support(&a, &t, &y, DEFAULT_CONDITION_CAP),
            Err(SolverError::IllConditioned { .. })
        ));
        let t3 = SupportSet::full(3);
        assert!(matches!(
            ls_on_support(&a, &t3, &y, DEFAULT_CONDITION_CAP),
            Err(SolverError::TooManyColumns { size: 3, n: 2 })
        ));
    }
}
