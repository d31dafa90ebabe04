//! Seeded Monte Carlo experiments: the static CS-residual comparison, the
//! stability run, the low-SNR scenarios, and bound validation sweeps.
//!
//! Every trial owns a ChaCha8 stream derived from the run seed, so results
//! do not depend on thread scheduling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, BoundContext, BoundError, FactCheck};
use crate::filter::{FilterConfig, FilterError, FilterState, LsCsFilter, StepDiagnostics};
use crate::measurement::{MeasurementError, MeasurementMatrix, RipEstimator, RipMode};
use crate::sigmodel::{self, ModelError, SignalModelParams};
use crate::solver::{ls_on_support, DantzigSolver, SolverError};
use crate::support::{SignalVector, SupportError, SupportSet};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Support(#[from] SupportError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Whether the error comes from a bad configuration rather than a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_) | HarnessError::Model(_) | HarnessError::Json(_)
        )
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian { sigma: f64 },
    /// i.i.d. uniform on `[-c, c]`.
    Uniform { c: f64 },
}

impl NoiseSpec {
    pub fn std_dev(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { sigma } => sigma,
            NoiseSpec::Uniform { c } => c / 3f64.sqrt(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DVector<f64> {
        match *self {
            NoiseSpec::Gaussian { sigma } if sigma > 0.0 => {
                let d = Normal::new(0.0, sigma).expect("validated sigma");
                DVector::from_fn(n, |_, _| d.sample(rng))
            }
            NoiseSpec::Uniform { c } if c > 0.0 => {
                let d = Uniform::new_inclusive(-c, c).expect("validated c");
                DVector::from_fn(n, |_, _| d.sample(rng))
            }
            _ => DVector::zeros(n),
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let v = match *self {
            NoiseSpec::Gaussian { sigma } => sigma,
            NoiseSpec::Uniform { c } => c,
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(config_err(format!("noise level must be finite and >= 0, got {v}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticCell {
    pub n: usize,
    pub sigma: f64,
}

fn default_m() -> usize {
    200
}
fn default_support() -> usize {
    20
}
fn default_two() -> usize {
    2
}
fn default_csres_factor() -> f64 {
    4.0
}
fn default_ds_factors() -> Vec<f64> {
    vec![12.0, 4.0, 0.4]
}

/// Single-instant comparison of CS-residual against the Dantzig selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticTableConfig {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_support")]
    pub support_size: usize,
    /// `|Delta|`: true support left out of `T`.
    #[serde(default = "default_two")]
    pub misses: usize,
    /// `|Delta_e|`: indices in `T` outside the true support.
    #[serde(default = "default_two")]
    pub extras: usize,
    pub cells: Vec<StaticCell>,
    /// CS-residual uses `lambda = factor * sigma`.
    #[serde(default = "default_csres_factor")]
    pub csres_lambda_factor: f64,
    #[serde(default = "default_ds_factors")]
    pub ds_lambda_factors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    /// Start from the true initial support.
    #[default]
    Genie,
    /// Gauss-Dantzig on `n0` separate measurements at `t = 0`. Unset
    /// parameters default to the filter's `lambda` and `alpha`.
    SimpleCs {
        n0: usize,
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
    },
}

/// Gauss-Dantzig run independently at every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSpec {
    pub lambda: f64,
    pub alpha: f64,
}

fn default_rip_trials() -> usize {
    200
}

/// Runtime checks of the detection and deletion guarantees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckSpec {
    /// Random subsets per sampled RIP entry used by the lemma checks.
    #[serde(default = "default_rip_trials")]
    pub rip_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub model: SignalModelParams,
    pub n: usize,
    pub noise: NoiseSpec,
    pub filter: FilterConfig,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub baseline: Option<BaselineSpec>,
    #[serde(default)]
    pub checks: Option<CheckSpec>,
    /// Window after each addition time within which misses and extras
    /// should vanish.
    #[serde(default = "default_window")]
    pub zero_window: usize,
}

fn default_window() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(flatten)]
    pub sequence: SequenceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowSnrConfig {
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    /// i.i.d. Gaussian entries, columns scaled to unit norm.
    Gaussian,
    /// `[I, H]` with `H` the normalized Sylvester Hadamard matrix, columns
    /// randomly permuted and sign-flipped; needs `m = 2n` with `n` a power
    /// of two.
    IdentityHadamard,
}

fn default_bv_m() -> usize {
    16
}
fn default_bv_n() -> usize {
    8
}
fn default_bv_support() -> usize {
    3
}
fn default_one() -> usize {
    1
}
fn default_magnitudes() -> [f64; 2] {
    [0.5, 1.5]
}
fn default_min_valid() -> usize {
    100
}
fn default_slack() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValidationConfig {
    #[serde(default = "default_bv_m")]
    pub m: usize,
    #[serde(default = "default_bv_n")]
    pub n: usize,
    pub matrix: MatrixKind,
    #[serde(default = "default_bv_support")]
    pub support_size: usize,
    #[serde(default = "default_one")]
    pub misses: usize,
    #[serde(default)]
    pub extras: usize,
    /// Range of the nonzero magnitudes; signs are random.
    #[serde(default = "default_magnitudes")]
    pub magnitudes: [f64; 2],
    /// Uniform noise half-width.
    pub noise_c: f64,
    /// Defaults to `noise_c * ||A||_1`, which keeps the noise within budget.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Addition threshold for the detected-support check.
    pub alpha: f64,
    #[serde(default)]
    pub rip: RipMode,
    /// Fewest instances with verified hypotheses for the sweep to count.
    #[serde(default = "default_min_valid")]
    pub min_valid: usize,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    StaticTable(StaticTableConfig),
    Stability(SequenceConfig),
    LowSnr(LowSnrConfig),
    BoundValidation(BoundValidationConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub experiment: Experiment,
    pub seed: u64,
    pub trials: usize,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let s = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn kind(&self) -> &'static str {
        match self.experiment {
            Experiment::StaticTable(_) => "static_table",
            Experiment::Stability(_) => "stability",
            Experiment::LowSnr(_) => "low_snr",
            Experiment::BoundValidation(_) => "bound_validation",
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(config_err("trials must be at least 1"));
        }
        match &self.experiment {
            Experiment::StaticTable(c) => c.validate(),
            Experiment::Stability(c) => c.validate(),
            Experiment::LowSnr(c) => {
                if c.scenarios.is_empty() {
                    return Err(config_err("low_snr needs at least one scenario"));
                }
                let mut names: Vec<&str> = c.scenarios.iter().map(|s| s.name.as_str()).collect();
                names.sort_unstable();
                names.dedup();
                if names.len() != c.scenarios.len() {
                    return Err(config_err("scenario names must be unique"));
                }
                c.scenarios.iter().try_for_each(|s| s.sequence.validate())
            }
            Experiment::BoundValidation(c) => c.validate(),
        }
    }
}

impl StaticTableConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.cells.is_empty() {
            return Err(config_err("static_table needs at least one cell"));
        }
        if self.misses > self.support_size {
            return Err(config_err("misses exceed support size"));
        }
        if self.support_size + self.extras > self.m {
            return Err(config_err("support plus extras exceed m"));
        }
        for c in &self.cells {
            if c.n == 0 || !(c.sigma > 0.0 && c.sigma.is_finite()) {
                return Err(config_err(format!("bad cell n={} sigma={}", c.n, c.sigma)));
            }
        }
        let ok = |f: f64| f > 0.0 && f.is_finite();
        if !ok(self.csres_lambda_factor) || !self.ds_lambda_factors.iter().all(|&f| ok(f)) {
            return Err(config_err("lambda factors must be positive"));
        }
        Ok(())
    }
}

impl SequenceConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        self.model.validate()?;
        self.noise.validate()?;
        self.filter
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        if self.n == 0 {
            return Err(config_err("n must be positive"));
        }
        if let InitSpec::SimpleCs { n0, .. } = self.init {
            if n0 == 0 {
                return Err(config_err("n0 must be positive"));
            }
        }
        Ok(())
    }
}

impl BoundValidationConfig {
    fn validate(&self) -> Result<(), HarnessError> {
        if self.n == 0 || self.m == 0 {
            return Err(config_err("n and m must be positive"));
        }
        if self.matrix == MatrixKind::IdentityHadamard
            && (self.m != 2 * self.n || !self.n.is_power_of_two())
        {
            return Err(config_err("identity_hadamard needs m = 2n with n a power of two"));
        }
        if self.misses > self.support_size || self.support_size + self.extras > self.m {
            return Err(config_err("inconsistent support sizes"));
        }
        let [lo, hi] = self.magnitudes;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(config_err("magnitudes must satisfy 0 < lo <= hi"));
        }
        if !(self.noise_c >= 0.0) || !(self.alpha >= 0.0) {
            return Err(config_err("noise_c and alpha must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-trial RNG: the run seed selects the key, `(group, trial)` the stream.
pub fn trial_rng(seed: u64, group: u32, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((group as u64) << 32) | trial as u64);
    rng
}

/// One CSV row; `trial == None` marks an aggregate over trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub trial: Option<usize>,
    pub t: usize,
    pub method: String,
    /// `||x - x_hat||^2`, or its mean over trials.
    pub err: f64,
    /// `||x||^2`, or its mean over trials.
    pub energy: f64,
    pub misses: f64,
    pub extras: f64,
    pub support_size: f64,
    pub err_csres: Option<f64>,
}

impl MetricsRow {
    pub fn nmse(&self) -> f64 {
        ratio(self.err, self.energy)
    }
}

fn ratio(err: f64, energy: f64) -> f64 {
    if energy > 0.0 {
        err / energy
    } else if err == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "trial",
    "t",
    "method",
    "nmse",
    "misses",
    "extras",
    "support_size",
    "err_csres",
    "err_final",
];

fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes rows under the fixed header. Per-trial counts print as integers,
/// aggregate means in scientific notation.
pub fn write_csv<W: std::io::Write>(w: W, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(CSV_HEADER)?;
    for r in rows {
        let count = |v: f64| match r.trial {
            Some(_) => format!("{}", v as u64),
            None => fmt_float(v),
        };
        wr.write_record([
            r.trial.map_or("all".to_string(), |k| k.to_string()),
            r.t.to_string(),
            r.method.clone(),
            fmt_float(r.nmse()),
            count(r.misses),
            count(r.extras),
            count(r.support_size),
            r.err_csres.map_or(String::new(), fmt_float),
            fmt_float(r.err),
        ])?;
    }
    wr.flush().map_err(|source| HarnessError::Io {
        path: PathBuf::from("<csv>"),
        source,
    })?;
    Ok(())
}

/// Per-`t` means over trials; NMSE is the ratio of the summed errors to the
/// summed energies.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    let mut acc: BTreeMap<usize, (MetricsRow, usize, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.trial.is_some()) {
        let e = acc.entry(r.t).or_insert_with(|| {
            (
                MetricsRow {
                    trial: None,
                    t: r.t,
                    method: r.method.clone(),
                    err: 0.0,
                    energy: 0.0,
                    misses: 0.0,
                    extras: 0.0,
                    support_size: 0.0,
                    err_csres: None,
                },
                0,
                0,
            )
        });
        e.0.err += r.err;
        e.0.energy += r.energy;
        e.0.misses += r.misses;
        e.0.extras += r.extras;
        e.0.support_size += r.support_size;
        if let Some(v) = r.err_csres {
            *e.0.err_csres.get_or_insert(0.0) += v;
            e.2 += 1;
        }
        e.1 += 1;
    }
    acc.into_values()
        .map(|(mut r, k, kc)| {
            let k = k as f64;
            r.err /= k;
            r.energy /= k;
            r.misses /= k;
            r.extras /= k;
            r.support_size /= k;
            r.err_csres = r.err_csres.map(|v| v / kc as f64);
            r
        })
        .collect()
}

/// Ratio-of-sums NMSE over every per-trial row with `t >= t_min`.
pub fn pooled_nmse(rows: &[MetricsRow], t_min: usize) -> f64 {
    let (e, s) = rows
        .iter()
        .filter(|r| r.trial.is_some() && r.t >= t_min)
        .fold((0.0, 0.0), |(e, s), r| (e + r.err, s + r.energy));
    ratio(e, s)
}

/// Rows for one method, per trial followed by the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTable {
    /// File stem, e.g. `stability_lscs`.
    pub name: String,
    pub rows: Vec<MetricsRow>,
}

fn method_table(name: String, mut rows: Vec<MetricsRow>) -> MethodTable {
    rows.sort_by_key(|r| (r.trial, r.t));
    let agg = aggregate(&rows);
    rows.extend(agg);
    MethodTable { name, rows }
}

fn row(trial: usize, t: usize, method: &str, x: &SignalVector, x_hat: &SignalVector) -> MetricsRow {
    let n = x.support();
    let s = x_hat.support();
    MetricsRow {
        trial: Some(trial),
        t,
        method: method.to_string(),
        err: x.sq_dist(x_hat),
        energy: x.norm_sq(),
        misses: n.difference(&s).map_or(0, |d| d.len()) as f64,
        extras: s.difference(&n).map_or(0, |d| d.len()) as f64,
        support_size: s.len() as f64,
        err_csres: None,
    }
}

fn random_subset<R: Rng + ?Sized>(rng: &mut R, from: &[usize], k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = sample(rng, from.len(), k).into_iter().map(|i| from[i]).collect();
    v.sort_unstable();
    v
}

fn random_sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// True support, `Delta`, `Delta_e` and the resulting `T` for one instance.
struct StaticSets {
    n: SupportSet,
    delta: SupportSet,
    t: SupportSet,
}

fn draw_sets<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    k: usize,
    misses: usize,
    extras: usize,
) -> Result<StaticSets, HarnessError> {
    let all: Vec<usize> = (0..m).collect();
    let n = random_subset(rng, &all, k);
    let delta = random_subset(rng, &n, misses);
    let off: Vec<usize> = (0..m).filter(|i| n.binary_search(i).is_err()).collect();
    let delta_e = random_subset(rng, &off, extras);
    let n = SupportSet::new(m, n)?;
    let delta = SupportSet::new(m, delta)?;
    let t = n.difference(&delta)?.union(&SupportSet::new(m, delta_e)?)?;
    Ok(StaticSets { n, delta, t })
}

/// NMSE per method for one `(n, sigma)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub sigma: f64,
    pub nmse: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticSummary {
    pub cells: Vec<CellSummary>,
}

pub const CSRES_METHOD: &str = "cs_residual";

/// Method name of the Dantzig selector at `lambda = factor * sigma`.
pub fn ds_method(factor: f64) -> String {
    format!("ds_{factor}sigma")
}

pub fn run_static_experiment(
    cfg: &StaticTableConfig,
    seed: u64,
    trials: usize,
) -> Result<(Vec<MethodTable>, StaticSummary), HarnessError> {
    cfg.validate()?;
    let mut tables = Vec::new();
    let mut cells = Vec::new();
    for (ci, cell) in cfg.cells.iter().enumerate() {
        let per_trial: Vec<Vec<MetricsRow>> = (0..trials)
            .into_par_iter()
            .map(|k| static_trial(cfg, cell, trial_rng(seed, ci as u32, k), k))
            .collect::<Result<_, _>>()?;
        let mut by_method: BTreeMap<String, Vec<MetricsRow>> = BTreeMap::new();
        for r in per_trial.into_iter().flatten() {
            by_method.entry(r.method.clone()).or_default().push(r);
        }
        let mut nmse = BTreeMap::new();
        for (method, rows) in by_method {
            nmse.insert(method.clone(), pooled_nmse(&rows, 0));
            tables.push(method_table(
                format!("static_n{}_sigma{}_{}", cell.n, cell.sigma, method),
                rows,
            ));
        }
        cells.push(CellSummary {
            n: cell.n,
            sigma: cell.sigma,
            nmse,
        });
    }
    Ok((tables, StaticSummary { cells }))
}

fn static_trial(
    cfg: &StaticTableConfig,
    cell: &StaticCell,
    mut rng: ChaCha8Rng,
    trial: usize,
) -> Result<Vec<MetricsRow>, HarnessError> {
    let a = MeasurementMatrix::gaussian_with_rng(cell.n, cfg.m, &mut rng)?;
    let sets = draw_sets(&mut rng, cfg.m, cfg.support_size, cfg.misses, cfg.extras)?;
    let mut x = SignalVector::zeros(cfg.m);
    for i in sets.n.iter() {
        x.set(i, random_sign(&mut rng));
    }
    let w = NoiseSpec::Gaussian { sigma: cell.sigma }.sample(cell.n, &mut rng);
    let y = a.apply(x.as_dvector())? + w;
    let solver = DantzigSolver::default();

    let x_init = ls_on_support(&a, &sets.t, &y, f64::INFINITY)?;
    let y_res = &y - a.apply(x_init.as_dvector())?;
    let beta = solver.solve(&a, &y_res, cfg.csres_lambda_factor * cell.sigma)?;
    let x_csres = x_init.add(&beta.zeta_hat);
    let mut r = row(trial, 0, CSRES_METHOD, &x, &x_csres);
    r.err_csres = Some(r.err);
    let mut rows = vec![r];
    for &f in &cfg.ds_lambda_factors {
        let ds = solver.solve(&a, &y, f * cell.sigma)?;
        rows.push(row(trial, 0, &ds_method(f), &x, &ds.zeta_hat));
    }
    Ok(rows)
}

/// Counts of one guarantee checked at every step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredicateTally {
    pub hypotheses: usize,
    pub violations: usize,
    /// Whether sampled RIP values entered the hypotheses.
    pub optimistic: bool,
}

/// A step where a guarantee's hypothesis held but its conclusion failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub trial: usize,
    pub t: usize,
    pub predicate: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub name: String,
    pub trials: usize,
    /// Ratio-of-sums NMSE over `t >= 1` for each method.
    pub nmse: BTreeMap<String, f64>,
    /// Epochs whose addition time plus the window fits in the horizon.
    pub epochs: usize,
    /// Of those, epochs where misses + extras hit zero within the window.
    pub epochs_zeroed: usize,
    /// Histogram of the first zero-hit delay; `None` never reached zero.
    pub delay_histogram: BTreeMap<String, usize>,
    /// Trials where the `t = 0` support estimate equals the true support.
    pub init_exact: usize,
    /// Steps where a stage failed and the previous support was carried.
    pub flagged_steps: usize,
    pub predicates: BTreeMap<String, PredicateTally>,
    pub counterexamples: Vec<Counterexample>,
    pub snr: Option<SnrSummary>,
}

impl SequenceSummary {
    pub fn zeroed_fraction(&self) -> f64 {
        if self.epochs == 0 {
            0.0
        } else {
            self.epochs_zeroed as f64 / self.epochs as f64
        }
    }
}

/// Average signal magnitude right after an addition and at the plateau,
/// relative to the noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSummary {
    pub min_snr: f64,
    pub max_snr: f64,
}

pub fn snr_summary(model: &SignalModelParams, noise: &NoiseSpec) -> SnrSummary {
    let rates = model.rates.to_vec(model.m);
    let k = rates.len() as f64;
    let first: f64 = rates.iter().map(|&a| model.magnitude.min(a)).sum::<f64>() / k;
    let top: f64 = rates.iter().map(|&a| model.plateau(a)).sum::<f64>() / k;
    let sd = noise.std_dev();
    SnrSummary {
        min_snr: first / sd,
        max_snr: top / sd,
    }
}

pub const LSCS_METHOD: &str = "lscs";
pub const GENIE_METHOD: &str = "genie_ls";
pub const SIMPLE_CS_METHOD: &str = "simple_cs";

struct TrialOutcome {
    rows: Vec<MetricsRow>,
    /// Misses + extras of LS-CS at every `t`.
    errors: Vec<usize>,
    init_exact: bool,
    flagged: usize,
    predicates: BTreeMap<String, PredicateTally>,
    counterexamples: Vec<Counterexample>,
}

/// Gauss-Dantzig that falls back to the plain Dantzig estimate when least
/// squares on the thresholded support is ill-posed.
fn gauss_dantzig(
    a: &MeasurementMatrix,
    y: &DVector<f64>,
    lambda: f64,
    alpha: f64,
    cap: f64,
) -> Result<SignalVector, HarnessError> {
    let ds = DantzigSolver::default().solve(a, y, lambda)?;
    let s = SupportSet::new(a.m(), (0..a.m()).filter(|&i| ds.zeta_hat.get(i).abs() > alpha))?;
    Ok(ls_on_support(a, &s, y, cap).unwrap_or(ds.zeta_hat))
}

pub fn run_sequence_experiment(
    name: &str,
    cfg: &SequenceConfig,
    seed: u64,
    group: u32,
    trials: usize,
) -> Result<(Vec<MethodTable>, SequenceSummary), HarnessError> {
    cfg.validate()?;
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|k| sequence_trial(cfg, trial_rng(seed, group, k), k))
        .collect::<Result<_, _>>()?;

    let p = &cfg.model;
    let mut epochs = 0;
    let mut zeroed = 0;
    let mut hist: BTreeMap<String, usize> = BTreeMap::new();
    let mut predicates: BTreeMap<String, PredicateTally> = BTreeMap::new();
    let mut counterexamples = Vec::new();
    let mut by_method: BTreeMap<String, Vec<MetricsRow>> = BTreeMap::new();
    let (mut init_exact, mut flagged) = (0, 0);
    for o in outcomes {
        let mut j = 1;
        while p.addition_time(j) + cfg.zero_window <= p.horizon {
            let tj = p.addition_time(j);
            let delay = (0..=p.horizon - tj).find(|&k| o.errors[tj + k] == 0);
            epochs += 1;
            if delay.is_some_and(|k| k <= cfg.zero_window) {
                zeroed += 1;
            }
            let key = delay.map_or("none".to_string(), |k| k.to_string());
            *hist.entry(key).or_default() += 1;
            j += 1;
        }
        init_exact += o.init_exact as usize;
        flagged += o.flagged;
        for (k, v) in o.predicates {
            let e = predicates.entry(k).or_default();
            e.hypotheses += v.hypotheses;
            e.violations += v.violations;
            e.optimistic |= v.optimistic;
        }
        counterexamples.extend(o.counterexamples);
        for r in o.rows {
            by_method.entry(r.method.clone()).or_default().push(r);
        }
    }
    let mut nmse = BTreeMap::new();
    let mut tables = Vec::new();
    for (method, rows) in by_method {
        nmse.insert(method.clone(), pooled_nmse(&rows, 1));
        tables.push(method_table(format!("{name}_{method}"), rows));
    }
    let snr = match cfg.noise {
        NoiseSpec::Uniform { c } if c > 0.0 => Some(snr_summary(p, &cfg.noise)),
        NoiseSpec::Gaussian { sigma } if sigma > 0.0 => Some(snr_summary(p, &cfg.noise)),
        _ => None,
    };
    Ok((
        tables,
        SequenceSummary {
            name: name.to_string(),
            trials,
            nmse,
            epochs,
            epochs_zeroed: zeroed,
            delay_histogram: hist,
            init_exact,
            flagged_steps: flagged,
            predicates,
            counterexamples,
            snr,
        },
    ))
}

fn tally(
    predicates: &mut BTreeMap<String, PredicateTally>,
    cex: &mut Vec<Counterexample>,
    name: &str,
    trial: usize,
    t: usize,
    check: &FactCheck,
) {
    let e = predicates.entry(name.to_string()).or_default();
    e.hypotheses += check.hypotheses;
    e.violations += check.violations.len();
    for &i in &check.violations {
        cex.push(Counterexample {
            trial,
            t,
            predicate: name.to_string(),
            detail: format!("index {i}"),
        });
    }
}

fn sequence_trial(
    cfg: &SequenceConfig,
    mut rng: ChaCha8Rng,
    trial: usize,
) -> Result<TrialOutcome, HarnessError> {
    let p = &cfg.model;
    let m = p.m;
    let seq = sigmodel::generate_with_rng(p, trial as u64, &mut rng)?;
    let a = MeasurementMatrix::gaussian_with_rng(cfg.n, m, &mut rng)?;
    let cap = cfg.filter.condition_cap;
    let filter = LsCsFilter::new(cfg.filter.clone())?;

    let mut rows = Vec::new();
    let mut errors = Vec::with_capacity(p.horizon + 1);
    let x0 = &seq.frames[0].x;
    let (support0, x_hat0) = match cfg.init {
        InitSpec::Genie => {
            let s = seq.frames[0].support.clone();
            let y0 = a.apply(x0.as_dvector())? + cfg.noise.sample(cfg.n, &mut rng);
            let x = ls_on_support(&a, &s, &y0, f64::INFINITY)?;
            (s, x)
        }
        InitSpec::SimpleCs { n0, lambda, alpha } => {
            let a0 = MeasurementMatrix::gaussian_with_rng(n0, m, &mut rng)?;
            let y0 = a0.apply(x0.as_dvector())? + cfg.noise.sample(n0, &mut rng);
            let lam = lambda.unwrap_or(cfg.filter.lambda);
            let al = alpha.unwrap_or(cfg.filter.alpha);
            let x = gauss_dantzig(&a0, &y0, lam, al, cap)?;
            let s = SupportSet::new(m, (0..m).filter(|&i| x.get(i).abs() > al))?;
            let x = x.masked(&s);
            (s, x)
        }
    };
    let init_exact = support0 == seq.frames[0].support;
    let r0 = row(trial, 0, LSCS_METHOD, x0, &x_hat0);
    errors.push((r0.misses + r0.extras) as usize);
    rows.push(r0);

    let mut rip = cfg.checks.map(|c| {
        RipEstimator::new(
            &a,
            RipMode::Sampled {
                trials: c.rip_trials,
                seed: rng.random(),
            },
        )
    });
    let norm_a1 = a.one_norm();
    let mut predicates = BTreeMap::new();
    let mut cex = Vec::new();
    let mut flagged = 0;
    let mut state = FilterState {
        t: 0,
        support: support0,
        x_hat: x_hat0,
    };
    for t in 1..=p.horizon {
        let x = &seq.frames[t].x;
        let w = cfg.noise.sample(cfg.n, &mut rng);
        let w_inf = w.amax();
        let y = a.apply(x.as_dvector())? + w;
        match filter.step(&state, &a, &y, Some(x)) {
            Ok((next, diag)) => {
                let mut r = row(trial, t, LSCS_METHOD, x, &next.x_hat);
                r.err_csres = diag.truth.as_ref().map(|d| d.err_csres);
                errors.push((r.misses + r.extras) as usize);
                rows.push(r);
                let c = &cfg.filter;
                tally(&mut predicates, &mut cex, "fact1", trial, t, &bounds::fact1(&diag, x, c.alpha));
                tally(&mut predicates, &mut cex, "fact2", trial, t, &bounds::fact2(&diag, x, c.alpha_del));
                tally(&mut predicates, &mut cex, "fact3", trial, t, &bounds::fact3(&diag, x, c.alpha_del));
                if let Some(rip) = rip.as_mut() {
                    let mut ctx = BoundContext::new(rip, cfg.n, c.lambda, norm_a1, w_inf)?;
                    check_lemmas(&mut ctx, &diag, x, c, trial, t, &mut predicates, &mut cex)?;
                }
                state = next;
            }
            Err(_) => {
                flagged += 1;
                let x_hat = ls_on_support(&a, &state.support, &y, cap)
                    .unwrap_or_else(|_| SignalVector::zeros(m));
                let r = row(trial, t, LSCS_METHOD, x, &x_hat);
                errors.push((r.misses + r.extras) as usize);
                rows.push(r);
                state = FilterState {
                    t,
                    support: state.support,
                    x_hat,
                };
            }
        }
        let genie = ls_on_support(&a, &seq.frames[t].support, &y, f64::INFINITY)?;
        rows.push(row(trial, t, GENIE_METHOD, x, &genie));
        if let Some(b) = cfg.baseline {
            let est = gauss_dantzig(&a, &y, b.lambda, b.alpha, cap)?;
            rows.push(row(trial, t, SIMPLE_CS_METHOD, x, &est));
        }
    }
    Ok(TrialOutcome {
        rows,
        errors,
        init_exact,
        flagged,
        predicates,
        counterexamples: cex,
    })
}

#[allow(clippy::too_many_arguments)]
fn check_lemmas(
    ctx: &mut BoundContext<'_>,
    diag: &StepDiagnostics,
    x: &SignalVector,
    c: &FilterConfig,
    trial: usize,
    t: usize,
    predicates: &mut BTreeMap<String, PredicateTally>,
    cex: &mut Vec<Counterexample>,
) -> Result<(), HarnessError> {
    let checks = [
        ("lemma_detection", bounds::check_lemma_detection(ctx, diag, x, c.alpha)?),
        (
            "lemma_no_false_deletion",
            bounds::check_lemma_no_false_deletion(ctx, diag, x, c.alpha_del)?,
        ),
        ("lemma_deletion", bounds::check_lemma_deletion(ctx, diag, x, c.alpha_del)?),
    ];
    for (name, outcome) in checks {
        let e = predicates.entry(name.to_string()).or_default();
        e.optimistic = true;
        if let Some(ok) = outcome {
            e.hypotheses += 1;
            if !ok {
                e.violations += 1;
                cex.push(Counterexample {
                    trial,
                    t,
                    predicate: name.to_string(),
                    detail: String::new(),
                });
            }
        }
    }
    Ok(())
}

/// One bound compared against the error it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub instance: usize,
    pub bound: String,
    pub actual: f64,
    pub value: f64,
    pub holds: bool,
    pub optimistic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValidationReport {
    pub instances: usize,
    /// Instances where the CS-residual bound's hypotheses held.
    pub valid_instances: usize,
    /// Number of applicable checks per bound.
    pub checked: BTreeMap<String, usize>,
    pub violations: Vec<BoundCheck>,
    /// True when any sampled RIP value was used; soundness is then not
    /// asserted.
    pub optimistic: bool,
    pub min_valid: usize,
}

impl BoundValidationReport {
    pub fn sound(&self) -> bool {
        self.optimistic || self.violations.is_empty()
    }
}

fn hadamard(n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::from_element(1, 1, 1.0);
    while h.nrows() < n {
        let k = h.nrows();
        let mut next = DMatrix::zeros(2 * k, 2 * k);
        next.view_mut((0, 0), (k, k)).copy_from(&h);
        next.view_mut((0, k), (k, k)).copy_from(&h);
        next.view_mut((k, 0), (k, k)).copy_from(&h);
        next.view_mut((k, k), (k, k)).copy_from(&(-&h));
        h = next;
    }
    h / (n as f64).sqrt()
}

fn bound_matrix<R: Rng + ?Sized>(
    cfg: &BoundValidationConfig,
    rng: &mut R,
) -> Result<MeasurementMatrix, HarnessError> {
    match cfg.matrix {
        MatrixKind::Gaussian => Ok(MeasurementMatrix::gaussian_with_rng(cfg.n, cfg.m, rng)?),
        MatrixKind::IdentityHadamard => {
            let n = cfg.n;
            let h = hadamard(n);
            let base = DMatrix::from_fn(n, 2 * n, |i, j| {
                if j < n {
                    (i == j) as u8 as f64
                } else {
                    h[(i, j - n)]
                }
            });
            let perm = sample(rng, 2 * n, 2 * n).into_vec();
            let signs: Vec<f64> = (0..2 * n).map(|_| random_sign(rng)).collect();
            let a = DMatrix::from_fn(n, 2 * n, |i, j| signs[j] * base[(i, perm[j])]);
            Ok(MeasurementMatrix::from_unit_columns(a)?)
        }
    }
}

pub fn run_bound_validation(
    cfg: &BoundValidationConfig,
    seed: u64,
    trials: usize,
) -> Result<(Vec<BoundCheck>, BoundValidationReport), HarnessError> {
    cfg.validate()?;
    let per: Vec<(bool, Vec<BoundCheck>)> = (0..trials)
        .into_par_iter()
        .map(|k| bound_instance(cfg, trial_rng(seed, 0, k), k))
        .collect::<Result<_, _>>()?;
    let mut checked: BTreeMap<String, usize> = BTreeMap::new();
    let mut violations = Vec::new();
    let mut valid = 0;
    let mut optimistic = false;
    let mut all = Vec::new();
    for (ok, checks) in per {
        valid += ok as usize;
        for c in checks {
            *checked.entry(c.bound.clone()).or_default() += 1;
            optimistic |= c.optimistic;
            if !c.holds {
                violations.push(c.clone());
            }
            all.push(c);
        }
    }
    Ok((
        all,
        BoundValidationReport {
            instances: trials,
            valid_instances: valid,
            checked,
            violations,
            optimistic,
            min_valid: cfg.min_valid,
        },
    ))
}

fn bound_instance(
    cfg: &BoundValidationConfig,
    mut rng: ChaCha8Rng,
    k: usize,
) -> Result<(bool, Vec<BoundCheck>), HarnessError> {
    let a = bound_matrix(cfg, &mut rng)?;
    let sets = draw_sets(&mut rng, cfg.m, cfg.support_size, cfg.misses, cfg.extras)?;
    let mut x = SignalVector::zeros(cfg.m);
    let [lo, hi] = cfg.magnitudes;
    for i in sets.n.iter() {
        let mag = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        x.set(i, random_sign(&mut rng) * mag);
    }
    let w = NoiseSpec::Uniform { c: cfg.noise_c }.sample(cfg.n, &mut rng);
    let w_sq = w.norm_squared();
    let w_inf = w.amax();
    let y = a.apply(x.as_dvector())? + &w;
    let norm_a1 = a.one_norm();
    let lambda = cfg.lambda.unwrap_or(cfg.noise_c * norm_a1);
    if !(lambda > 0.0) {
        return Err(config_err("lambda must be positive"));
    }

    let x_init = ls_on_support(&a, &sets.t, &y, f64::INFINITY)?;
    let y_res = &y - a.apply(x_init.as_dvector())?;
    let ds = DantzigSolver::default().solve(&a, &y_res, lambda)?;
    if !ds.is_optimal() {
        return Ok((false, Vec::new()));
    }
    let x_csres = x_init.add(&ds.zeta_hat);
    let err_csres = x.sq_dist(&x_csres);
    let beta = x.sub(&x_init);

    let x_delta: Vec<f64> = x.restrict(&sets.delta);
    let x_delta_sq = x.norm_sq_on(&sets.delta);
    let size_t = sets.t.len();
    let size_delta = sets.delta.len();

    let mut rip = RipEstimator::new(&a, cfg.rip);
    let mut ctx = BoundContext::new(&mut rip, cfg.n, lambda, norm_a1, w_inf)?;
    let mut checks = Vec::new();
    let mut push = |name: &str, actual: f64, r: Result<bounds::Bound, BoundError>| -> Result<bool, HarnessError> {
        match r {
            Ok(b) => {
                checks.push(BoundCheck {
                    instance: k,
                    bound: name.to_string(),
                    actual,
                    value: b.value,
                    holds: actual <= b.value + cfg.slack,
                    optimistic: b.optimistic,
                });
                Ok(true)
            }
            Err(BoundError::NotApplicable(_)) | Err(BoundError::Undefined(_)) => Ok(false),
            Err(e) => Err(e.into()),
        }
    };

    let valid = push("theorem1", err_csres, ctx.theorem1(size_t, &x_delta, w_sq))?;
    let cor1 = if size_delta > 0 {
        ctx.corollary1(size_t, size_delta, x_delta_sq).map(|c| bounds::Bound {
            value: c.bound,
            argmin: None,
            optimistic: c.optimistic,
        })
    } else {
        ctx.corollary1_b0(size_t)
    };
    push("corollary1", err_csres, cor1)?;
    let l1_delta: f64 = x_delta.iter().map(|v| v.abs()).sum();
    let b = if l1_delta > 0.0 {
        beta.restrict(&sets.t).iter().map(|v| v.abs()).sum::<f64>() / l1_delta
    } else {
        0.0
    };
    push("corollary2", err_csres, ctx.corollary2(size_t, size_delta, x_delta_sq, b))?;
    push(
        "beta_t",
        beta.norm_sq_on(&sets.t),
        ctx.beta_t_bound(size_t, size_delta, x_delta_sq, w_sq),
    )?;

    let off = sets.t.complement();
    let added = SupportSet::new(cfg.m, off.iter().filter(|&i| x_csres.get(i).abs() > cfg.alpha))?;
    let t_det = sets.t.union(&added)?;
    if let Ok(x_det) = ls_on_support(&a, &t_det, &y, f64::INFINITY) {
        let miss = sets.n.difference(&t_det)?;
        let actual = x.sub(&x_det).norm_sq_on(&t_det);
        push(
            "fact4",
            actual,
            ctx.detected_ls_bound(t_det.len(), miss.len(), x.norm_sq_on(&miss)),
        )?;
    }
    Ok((valid, checks))
}

/// Output of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Summary {
    StaticTable(StaticSummary),
    Stability(SequenceSummary),
    LowSnr { scenarios: Vec<SequenceSummary> },
    BoundValidation(BoundValidationReport),
}

impl Summary {
    /// Whether the run found a bound violation or a runtime counterexample.
    pub fn assertion_failed(&self) -> bool {
        match self {
            Summary::StaticTable(_) => false,
            Summary::Stability(s) => !s.counterexamples.is_empty(),
            Summary::LowSnr { scenarios } => scenarios.iter().any(|s| !s.counterexamples.is_empty()),
            Summary::BoundValidation(r) => !r.sound(),
        }
    }
}

pub struct RunOutput {
    pub tables: Vec<MethodTable>,
    pub bound_checks: Vec<BoundCheck>,
    pub summary: Summary,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let (seed, trials) = (cfg.seed, cfg.trials);
    Ok(match &cfg.experiment {
        Experiment::StaticTable(c) => {
            let (tables, s) = run_static_experiment(c, seed, trials)?;
            RunOutput {
                tables,
                bound_checks: Vec::new(),
                summary: Summary::StaticTable(s),
            }
        }
        Experiment::Stability(c) => {
            let (tables, s) = run_sequence_experiment("stability", c, seed, 0, trials)?;
            RunOutput {
                tables,
                bound_checks: Vec::new(),
                summary: Summary::Stability(s),
            }
        }
        Experiment::LowSnr(c) => {
            let mut tables = Vec::new();
            let mut scenarios = Vec::new();
            for (g, sc) in c.scenarios.iter().enumerate() {
                let (t, s) = run_sequence_experiment(&sc.name, &sc.sequence, seed, g as u32, trials)?;
                tables.extend(t);
                scenarios.push(s);
            }
            RunOutput {
                tables,
                bound_checks: Vec::new(),
                summary: Summary::LowSnr { scenarios },
            }
        }
        Experiment::BoundValidation(c) => {
            let (checks, r) = run_bound_validation(c, seed, trials)?;
            RunOutput {
                tables: Vec::new(),
                bound_checks: checks,
                summary: Summary::BoundValidation(r),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub kind: String,
    pub seed: u64,
    pub trials: usize,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
    pub rip_provenance: Option<String>,
    pub summary: Summary,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes one CSV per table, the bound checks if any, and `manifest.json`.
pub fn write_outputs(
    cfg: &ExperimentConfig,
    out: &RunOutput,
    dir: &Path,
) -> Result<Manifest, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    for t in &out.tables {
        let name = format!("{}.csv", t.name);
        let path = dir.join(&name);
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        write_csv(std::io::BufWriter::new(f), &t.rows)?;
        files.push(name);
    }
    if !out.bound_checks.is_empty() {
        let name = "bound_checks.csv".to_string();
        let path = dir.join(&name);
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        let mut wr = csv::Writer::from_writer(std::io::BufWriter::new(f));
        wr.write_record(["instance", "bound", "actual", "value", "holds", "optimistic"])?;
        for c in &out.bound_checks {
            wr.write_record([
                c.instance.to_string(),
                c.bound.clone(),
                fmt_float(c.actual),
                fmt_float(c.value),
                c.holds.to_string(),
                c.optimistic.to_string(),
            ])?;
        }
        wr.flush().map_err(io_err(&path))?;
        files.push(name);
    }
    let rip_provenance = match (&cfg.experiment, &out.summary) {
        (Experiment::BoundValidation(c), Summary::BoundValidation(r)) => Some(format!(
            "{} ({})",
            match c.rip {
                RipMode::Exhaustive { .. } => "exhaustive",
                RipMode::Sampled { .. } => "sampled",
            },
            if r.optimistic { "optimistic" } else { "exact" }
        )),
        (_, Summary::Stability(_) | Summary::LowSnr { .. }) => {
            Some("sampled lower bounds for runtime lemma checks (optimistic)".into())
        }
        _ => None,
    };
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        kind: cfg.kind().to_string(),
        seed: cfg.seed,
        trials: cfg.trials,
        config: cfg.clone(),
        files,
        rip_provenance,
        summary: out.summary.clone(),
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
    Ok(manifest)
}

/// Input of a stand-alone stability condition check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCheckConfig {
    pub model: SignalModelParams,
    pub n: usize,
    /// Seed of the Gaussian measurement matrix.
    pub matrix_seed: u64,
    pub lambda: f64,
    /// Noise bound `||w||_inf`.
    pub noise_linf: f64,
    pub alpha: f64,
    #[serde(default)]
    pub alpha_del: Option<f64>,
    /// Assumed false detections per unit time.
    #[serde(default)]
    pub f: usize,
    /// Evaluate this `d0`; when unset, search for the smallest that works.
    #[serde(default)]
    pub d0: Option<usize>,
    #[serde(default)]
    pub rip: RipMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCheckOutput {
    pub thresholds: crate::measurement::Thresholds,
    pub report: Option<bounds::ConditionReport>,
}

/// Evaluates the stability conditions for a seeded matrix. Returns the
/// filled RIP table alongside the report so callers can cache it.
pub fn check_stability(
    cfg: &StabilityCheckConfig,
    table: Option<crate::measurement::RipTable>,
) -> Result<(StabilityCheckOutput, crate::measurement::RipTable), HarnessError> {
    cfg.model.validate()?;
    let a = MeasurementMatrix::gaussian(cfg.n, cfg.model.m, cfg.matrix_seed)?;
    let mut rip = match table {
        Some(t) => RipEstimator::with_table(&a, cfg.rip, t).map_err(BoundError::from)?,
        None => RipEstimator::new(&a, cfg.rip),
    };
    let out = {
        let mut ctx = BoundContext::new(&mut rip, cfg.n, cfg.lambda, a.one_norm(), cfg.noise_linf)?;
        let thresholds = ctx.thresholds()?;
        let report = match cfg.d0 {
            Some(d0) => Some(ctx.theorem2_check(
                &cfg.model,
                &bounds::Theorem2Inputs {
                    f: cfg.f,
                    d0,
                    alpha: cfg.alpha,
                    alpha_del: cfg.alpha_del,
                },
            )?),
            None => ctx.find_min_d0(&cfg.model, cfg.f, cfg.alpha, cfg.alpha_del)?,
        };
        StabilityCheckOutput { thresholds, report }
    };
    Ok((out, rip.into_table()))
}

/// Ready-made configurations for the reference experiments.
pub mod presets {
    use super::*;
    use crate::filter::DetectionMode;
    use crate::sigmodel::Rates;
    use crate::solver::DEFAULT_CONDITION_CAP;

    /// Noise standard deviations of the static comparison.
    pub const STATIC_SIGMAS: [f64; 4] = [0.0439, 0.0878, 0.1756, 0.439];

    pub fn static_table(trials: usize, seed: u64) -> ExperimentConfig {
        let mut cells = Vec::new();
        for n in [45, 59] {
            for s in STATIC_SIGMAS {
                cells.push(StaticCell { n, sigma: s });
            }
        }
        for s in &STATIC_SIGMAS[..2] {
            cells.push(StaticCell { n: 100, sigma: *s });
        }
        ExperimentConfig {
            experiment: Experiment::StaticTable(StaticTableConfig {
                m: 200,
                support_size: 20,
                misses: 2,
                extras: 2,
                cells,
                csres_lambda_factor: 4.0,
                ds_lambda_factors: default_ds_factors(),
            }),
            seed,
            trials,
        }
    }

    fn filter(lambda: f64, alpha: f64, alpha_del: f64, cap: Option<usize>) -> FilterConfig {
        FilterConfig {
            lambda,
            alpha,
            alpha_del,
            max_additions: cap,
            condition_cap: DEFAULT_CONDITION_CAP,
            detection: DetectionMode::Threshold,
        }
    }

    pub fn stability_sequence(horizon: usize) -> SequenceConfig {
        let c = 0.0528;
        SequenceConfig {
            model: SignalModelParams {
                m: 200,
                s0: 20,
                sa: 2,
                d: 8,
                r: 2,
                magnitude: 3.0,
                rates: Rates::Split {
                    first: 0.5,
                    second: 0.25,
                },
                horizon,
            },
            n: 59,
            noise: NoiseSpec::Uniform { c },
            filter: filter(0.35, c, 2.28 * c, None),
            init: InitSpec::Genie,
            baseline: Some(BaselineSpec {
                lambda: 0.035,
                alpha: c,
            }),
            checks: Some(CheckSpec { rip_trials: 200 }),
            zero_window: 4,
        }
    }

    pub fn stability(trials: usize, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            experiment: Experiment::Stability(stability_sequence(50)),
            seed,
            trials,
        }
    }

    fn low_snr_sequence(c: f64, d: usize, r: usize, alpha: f64, cap: usize, horizon: usize) -> SequenceConfig {
        SequenceConfig {
            model: SignalModelParams {
                m: 200,
                s0: 20,
                sa: 2,
                d,
                r,
                magnitude: 1.0,
                rates: Rates::Uniform { value: 0.2 },
                horizon,
            },
            n: 59,
            noise: NoiseSpec::Uniform { c },
            filter: filter(0.176, alpha, alpha, Some(cap)),
            init: InitSpec::SimpleCs {
                n0: 150,
                lambda: None,
                alpha: Some(0.2),
            },
            baseline: None,
            checks: None,
            zero_window: d.saturating_sub(1).max(1),
        }
    }

    pub fn slow_adds(horizon: usize) -> SequenceConfig {
        let c = 0.1266;
        low_snr_sequence(c, 8, 3, c / 2.0, 3, horizon)
    }

    pub fn fast_adds(horizon: usize) -> SequenceConfig {
        let c = 0.0528;
        low_snr_sequence(c, 3, 2, c, 2, horizon)
    }

    pub fn low_snr(trials: usize, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            experiment: Experiment::LowSnr(LowSnrConfig {
                scenarios: vec![
                    Scenario {
                        name: "slow_adds".into(),
                        sequence: slow_adds(50),
                    },
                    Scenario {
                        name: "fast_adds".into(),
                        sequence: fast_adds(50),
                    },
                ],
            }),
            seed,
            trials,
        }
    }

    pub fn bound_validation(trials: usize, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            experiment: Experiment::BoundValidation(BoundValidationConfig {
                m: 16,
                n: 8,
                matrix: MatrixKind::IdentityHadamard,
                support_size: 3,
                misses: 1,
                extras: 0,
                magnitudes: default_magnitudes(),
                noise_c: 0.01,
                lambda: None,
                alpha: 0.1,
                rip: RipMode::default(),
                min_valid: 100,
                slack: 1e-9,
            }),
            seed,
            trials,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        for cfg in [
            presets::static_table(3, 1),
            presets::stability(2, 5),
            presets::low_snr(2, 5),
            presets::bound_validation(4, 9),
        ] {
            let s = serde_json::to_string(&cfg).unwrap();
            assert_eq!(ExperimentConfig::from_json(&s).unwrap(), cfg);
        }
    }

    #[test]
    fn zero_trials_rejected() {
        let mut cfg = presets::stability(1, 0);
        cfg.trials = 0;
        assert!(cfg.validate().unwrap_err().is_config());
    }

    #[test]
    fn snr_of_reference_scenarios() {
        let s = snr_summary(&presets::slow_adds(10).model, &presets::slow_adds(10).noise);
        assert!((s.min_snr - 0.2 * 3f64.sqrt() / 0.1266).abs() < 1e-12);
        assert!((s.max_snr - 3f64.sqrt() / 0.1266).abs() < 1e-12);
        let st = presets::stability_sequence(10);
        let s = snr_summary(&st.model, &st.noise);
        // (0.5 + 0.25)/2 and (3 + 8 * 0.25)/2 over c / sqrt(3)
        assert!((s.min_snr - 0.375 / (0.0528 / 3f64.sqrt())).abs() < 1e-9);
        assert!((s.max_snr - 2.5 / (0.0528 / 3f64.sqrt())).abs() < 1e-9);
    }

    #[test]
    fn hadamard_is_orthonormal() {
        let h = hadamard(8);
        let g = h.transpose() * &h;
        assert!((g - DMatrix::identity(8, 8)).amax() < 1e-12);
    }

    #[test]
    fn aggregate_is_ratio_of_sums() {
        let mk = |trial, err, energy| MetricsRow {
            trial: Some(trial),
            t: 1,
            method: "m".into(),
            err,
            energy,
            misses: 1.0,
            extras: 0.0,
            support_size: 3.0,
            err_csres: None,
        };
        let rows = vec![mk(0, 1.0, 1.0), mk(1, 0.0, 3.0)];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 1);
        assert!((agg[0].nmse() - 0.25).abs() < 1e-15);
        assert!((pooled_nmse(&rows, 0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn csv_header_and_format() {
        let r = MetricsRow {
            trial: Some(3),
            t: 2,
            method: "lscs".into(),
            err: 0.5,
            energy: 2.0,
            misses: 1.0,
            extras: 0.0,
            support_size: 20.0,
            err_csres: Some(0.75),
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[r]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(
            lines.next().unwrap(),
            "trial,t,method,nmse,misses,extras,support_size,err_csres,err_final"
        );
        assert_eq!(
            lines.next().unwrap(),
            "3,2,lscs,2.50000000e-1,1,0,20,7.50000000e-1,5.00000000e-1"
        );
    }
}
