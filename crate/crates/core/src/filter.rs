//! The LS-CS-residual recursion and its baselines.
//!
//! One step takes the previous support estimate `T`, computes least squares
//! on `T`, runs the Dantzig selector on the residual, adds coefficients above
//! the addition threshold, re-estimates by least squares, and deletes
//! coefficients at or below the deletion threshold.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measurement::MeasurementMatrix;
use crate::solver::{
    gram_condition_number, ls_on_support, DantzigSolver, DsSolution, SolveStatus, SolverError,
    DEFAULT_CONDITION_CAP,
};
use crate::support::{magnitude_order, SignalVector, SupportError, SupportSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InitialLs,
    Residual,
    Dantzig,
    Detection,
    DetectionLs,
    Deletion,
    FinalLs,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error("{stage:?} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: SolverError,
    },
    #[error("dantzig selector ended with status {0:?}")]
    DantzigStatus(SolveStatus),
    #[error(transparent)]
    Support(#[from] SupportError),
}

impl FilterError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            FilterError::Stage { stage, .. } => Some(*stage),
            FilterError::DantzigStatus(_) => Some(Stage::Dantzig),
            _ => None,
        }
    }
}

fn at(stage: Stage) -> impl FnOnce(SolverError) -> FilterError {
    move |source| FilterError::Stage { stage, source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    /// Add every off-support index with `|x| > alpha`.
    Threshold,
    /// Add candidates in decreasing magnitude while the condition number of
    /// `A_T'A_T` stays within the cap.
    GreedyConditionNumber,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub lambda: f64,
    /// Addition threshold.
    pub alpha: f64,
    /// Deletion threshold.
    pub alpha_del: f64,
    /// Keep at most this many of the largest candidates.
    #[serde(default)]
    pub max_additions: Option<usize>,
    #[serde(default = "default_cap")]
    pub condition_cap: f64,
    #[serde(default = "default_mode")]
    pub detection: DetectionMode,
}

fn default_cap() -> f64 {
    DEFAULT_CONDITION_CAP
}

fn default_mode() -> DetectionMode {
    DetectionMode::Threshold
}

impl FilterConfig {
    pub fn new(lambda: f64, alpha: f64, alpha_del: f64) -> Self {
        Self {
            lambda,
            alpha,
            alpha_del,
            max_additions: None,
            condition_cap: DEFAULT_CONDITION_CAP,
            detection: DetectionMode::Threshold,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lambda) || !ok(self.alpha) || !ok(self.alpha_del) {
            return Err(FilterError::InvalidConfig(
                "lambda, alpha and alpha_del must be finite and nonnegative".into(),
            ));
        }
        if !(self.condition_cap > 1.0) {
            return Err(FilterError::InvalidConfig(format!(
                "condition cap must exceed 1, got {}",
                self.condition_cap
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub t: usize,
    pub support: SupportSet,
    pub x_hat: SignalVector,
}

/// Errors of the individual estimates against a known signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDiagnostics {
    /// `|Delta|`: true support missing from the previous estimate.
    pub delta: usize,
    /// `|Delta_e|`: previous estimate outside the true support.
    pub delta_e: usize,
    pub det_misses: usize,
    pub det_extras: usize,
    /// `|Delta~|` after deletion.
    pub misses: usize,
    /// `|Delta~_e|` after deletion.
    pub extras: usize,
    pub err_init: f64,
    pub err_csres: f64,
    pub err_det: f64,
    pub err_final: f64,
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub prev_support: SupportSet,
    pub x_init: SignalVector,
    pub y_res: DVector<f64>,
    pub beta_hat: SignalVector,
    pub x_csres: SignalVector,
    pub t_det: SupportSet,
    pub x_det: SignalVector,
    pub deleted: SupportSet,
    pub final_support: SupportSet,
    pub x_final: SignalVector,
    pub ds: DsSolution,
    /// Candidates above `alpha` left out by the addition cap.
    pub candidates_dropped: usize,
    pub truth: Option<TruthDiagnostics>,
}

fn truth_diagnostics(
    x: &SignalVector,
    prev: &SupportSet,
    x_init: &SignalVector,
    x_csres: &SignalVector,
    t_det: &SupportSet,
    x_det: &SignalVector,
    final_support: &SupportSet,
    x_final: &SignalVector,
) -> Result<TruthDiagnostics, SupportError> {
    let n = x.support();
    Ok(TruthDiagnostics {
        delta: n.difference(prev)?.len(),
        delta_e: prev.difference(&n)?.len(),
        det_misses: n.difference(t_det)?.len(),
        det_extras: t_det.difference(&n)?.len(),
        misses: n.difference(final_support)?.len(),
        extras: final_support.difference(&n)?.len(),
        err_init: x.sq_dist(x_init),
        err_csres: x.sq_dist(x_csres),
        err_det: x.sq_dist(x_det),
        err_final: x.sq_dist(x_final),
    })
}

/// LS-CS-residual estimator for a fixed configuration.
#[derive(Debug, Clone)]
pub struct LsCsFilter {
    pub config: FilterConfig,
    pub solver: DantzigSolver,
}

impl LsCsFilter {
    pub fn new(config: FilterConfig) -> Result<Self, FilterError> {
        config.validate()?;
        Ok(Self {
            config,
            solver: DantzigSolver::default(),
        })
    }

    /// One recursion step from `state` at time `state.t` to `state.t + 1`.
    pub fn step(
        &self,
        state: &FilterState,
        a: &MeasurementMatrix,
        y: &DVector<f64>,
        truth: Option<&SignalVector>,
    ) -> Result<(FilterState, StepDiagnostics), FilterError> {
        let cfg = &self.config;
        let t_prev = &state.support;
        let x_init = ls_on_support(a, t_prev, y, cfg.condition_cap).map_err(at(Stage::InitialLs))?;
        let y_res = y - a.apply(x_init.as_dvector()).map_err(|e| at(Stage::Residual)(e.into()))?;
        let ds = self
            .solver
            .solve(a, &y_res, cfg.lambda)
            .map_err(at(Stage::Dantzig))?;
        if ds.status != SolveStatus::Optimal {
            return Err(FilterError::DantzigStatus(ds.status));
        }
        let beta_hat = ds.zeta_hat.clone();
        let x_csres = beta_hat.add(&x_init);

        let (t_det, candidates_dropped) = self.detect(a, t_prev, &x_csres)?;
        let x_det = ls_on_support(a, &t_det, y, cfg.condition_cap).map_err(at(Stage::DetectionLs))?;
        let deleted = SupportSet::new(
            a.m(),
            t_det.iter().filter(|&i| x_det.get(i).abs() <= cfg.alpha_del),
        )?;
        let final_support = t_det.difference(&deleted)?;
        let x_final =
            ls_on_support(a, &final_support, y, cfg.condition_cap).map_err(at(Stage::FinalLs))?;
        let truth = match truth {
            Some(x) => Some(truth_diagnostics(
                x,
                t_prev,
                &x_init,
                &x_csres,
                &t_det,
                &x_det,
                &final_support,
                &x_final,
            )?),
            None => None,
        };
        let next = FilterState {
            t: state.t + 1,
            support: final_support.clone(),
            x_hat: x_final.clone(),
        };
        Ok((
            next,
            StepDiagnostics {
                prev_support: t_prev.clone(),
                x_init,
                y_res,
                beta_hat,
                x_csres,
                t_det,
                x_det,
                deleted,
                final_support,
                x_final,
                ds,
                candidates_dropped,
                truth,
            },
        ))
    }

    fn detect(
        &self,
        a: &MeasurementMatrix,
        t_prev: &SupportSet,
        x_csres: &SignalVector,
    ) -> Result<(SupportSet, usize), FilterError> {
        let cfg = &self.config;
        let off = t_prev.complement();
        let above: Vec<usize> = magnitude_order(x_csres, &off)
            .into_iter()
            .filter(|&i| x_csres.get(i).abs() > cfg.alpha)
            .collect();
        let cap = cfg.max_additions.unwrap_or(usize::MAX);
        match cfg.detection {
            DetectionMode::Threshold => {
                let dropped = above.len().saturating_sub(cap);
                let chosen = above.into_iter().take(cap);
                Ok((t_prev.union(&SupportSet::new(a.m(), chosen)?)?, dropped))
            }
            DetectionMode::GreedyConditionNumber => {
                let mut cols: Vec<usize> = t_prev.iter().collect();
                let mut added = 0;
                let total = above.len();
                for i in above {
                    if added >= cap || cols.len() >= a.n() {
                        break;
                    }
                    cols.push(i);
                    let sub: DMatrix<f64> = a.matrix().select_columns(&cols);
                    if gram_condition_number(&sub) > cfg.condition_cap {
                        cols.pop();
                        break;
                    }
                    added += 1;
                }
                Ok((SupportSet::new(a.m(), cols)?, total - added))
            }
        }
    }
}

/// Least squares on the true support.
pub fn genie_ls(
    a: &MeasurementMatrix,
    support: &SupportSet,
    y: &DVector<f64>,
) -> Result<SignalVector, SolverError> {
    ls_on_support(a, support, y, f64::INFINITY)
}

#[derive(Debug, Clone)]
pub struct SimpleCsResult {
    pub ds: SignalVector,
    pub support: SupportSet,
    pub x_hat: SignalVector,
}

/// Dantzig selector on `y` followed by least squares on the entries with
/// magnitude above `alpha`.
pub fn simple_cs(
    a: &MeasurementMatrix,
    y: &DVector<f64>,
    lambda: f64,
    alpha: f64,
    cond_cap: f64,
) -> Result<SimpleCsResult, FilterError> {
    let sol = DantzigSolver::default()
        .solve(a, y, lambda)
        .map_err(at(Stage::Dantzig))?;
    if sol.status != SolveStatus::Optimal {
        return Err(FilterError::DantzigStatus(sol.status));
    }
    let ds = sol.zeta_hat;
    let support = SupportSet::new(a.m(), (0..a.m()).filter(|&i| ds.get(i).abs() > alpha))?;
    let x_hat = ls_on_support(a, &support, y, cond_cap).map_err(at(Stage::DetectionLs))?;
    Ok(SimpleCsResult { ds, support, x_hat })
}
