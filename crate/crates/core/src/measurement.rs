//! Measurement matrices and restricted isometry constants.

use std::collections::BTreeMap;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::support::SupportSet;

/// Default cap on the number of subsets visited by exhaustive enumeration.
pub const DEFAULT_SUBSET_BUDGET: u64 = 2_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasurementError {
    #[error("invalid dimensions n={n}, m={m}")]
    InvalidDimensions { n: usize, m: usize },
    #[error("column {col} has norm {norm}, expected 1")]
    NotUnitNorm { col: usize, norm: f64 },
    #[error("column {col} is zero and cannot be normalized")]
    ZeroColumn { col: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("vector length {got} does not match {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("support dimension {got} does not match column count {expected}")]
    SupportMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RipError {
    #[error("exhaustive enumeration needs {required} subsets, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u64 },
    #[error("sparsity {s} (and {s_prime}) does not fit in {m} columns")]
    SizeTooLarge { s: usize, s_prime: usize, m: usize },
    #[error("rip table is missing {0}")]
    Insufficient(String),
    #[error("rip table digest {table} does not match matrix digest {matrix}")]
    DigestMismatch { table: String, matrix: String },
    #[error("monotonicity violated: {0}")]
    NotMonotone(String),
}

/// Real `n x m` matrix with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    a: DMatrix<f64>,
    one_norm: f64,
}

impl MeasurementMatrix {
    /// Draws i.i.d. Gaussian entries and normalizes each column.
    pub fn gaussian(n: usize, m: usize, seed: u64) -> Result<Self, MeasurementError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::gaussian_with_rng(n, m, &mut rng)
    }

    pub fn gaussian_with_rng<R: Rng + ?Sized>(
        n: usize,
        m: usize,
        rng: &mut R,
    ) -> Result<Self, MeasurementError> {
        if n == 0 || m == 0 {
            return Err(MeasurementError::InvalidDimensions { n, m });
        }
        let a = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self::normalized(a)
    }

    /// Scales every column to unit norm.
    pub fn normalized(mut a: DMatrix<f64>) -> Result<Self, MeasurementError> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(MeasurementError::InvalidDimensions {
                n: a.nrows(),
                m: a.ncols(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(MeasurementError::NonFinite);
        }
        for (col, mut c) in a.column_iter_mut().enumerate() {
            let norm = c.norm();
            if norm == 0.0 {
                return Err(MeasurementError::ZeroColumn { col });
            }
            c /= norm;
        }
        Ok(Self::wrap(a))
    }

    /// Accepts a matrix whose columns already have unit norm (to 1e-9).
    pub fn from_unit_columns(a: DMatrix<f64>) -> Result<Self, MeasurementError> {
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(MeasurementError::InvalidDimensions {
                n: a.nrows(),
                m: a.ncols(),
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(MeasurementError::NonFinite);
        }
        for (col, c) in a.column_iter().enumerate() {
            let norm = c.norm();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(MeasurementError::NotUnitNorm { col, norm });
            }
        }
        Ok(Self::wrap(a))
    }

    fn wrap(a: DMatrix<f64>) -> Self {
        let one_norm = a
            .column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        Self { a, one_norm }
    }

    /// Number of measurements.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Signal dimension.
    pub fn m(&self) -> usize {
        self.a.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        self.one_norm
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>, MeasurementError> {
        if x.len() != self.m() {
            return Err(MeasurementError::LengthMismatch {
                expected: self.m(),
                got: x.len(),
            });
        }
        Ok(&self.a * x)
    }

    pub fn apply_transpose(&self, y: &DVector<f64>) -> Result<DVector<f64>, MeasurementError> {
        if y.len() != self.n() {
            return Err(MeasurementError::LengthMismatch {
                expected: self.n(),
                got: y.len(),
            });
        }
        Ok(self.a.tr_mul(y))
    }

    /// The columns indexed by `t`, in ascending order.
    pub fn columns(&self, t: &SupportSet) -> Result<DMatrix<f64>, MeasurementError> {
        if t.dim() != self.m() {
            return Err(MeasurementError::SupportMismatch {
                expected: self.m(),
                got: t.dim(),
            });
        }
        Ok(self.a.select_columns(t.as_slice()))
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.a.tr_mul(&self.a)
    }

    /// Hex SHA-256 over the shape and the little-endian entry bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.m() as u64).to_le_bytes());
        for v in self.a.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Whether a RIP value is an exact maximum or a sampled lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RipEntry {
    pub value: f64,
    pub provenance: Provenance,
}

impl RipEntry {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            provenance: Provenance::Exact,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.provenance == Provenance::Exact
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

fn principal(gram: &DMatrix<f64>, t: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(t.len(), t.len(), |i, j| gram[(t[i], t[j])])
}

fn block(gram: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| gram[(rows[i], cols[j])])
}

fn subset_delta(gram: &DMatrix<f64>, t: &[usize]) -> f64 {
    let eig = SymmetricEigen::new(principal(gram, t)).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (1.0 - lo).max(hi - 1.0).max(0.0)
}

fn spectral_norm(b: &DMatrix<f64>) -> f64 {
    let small = if b.nrows() <= b.ncols() {
        b * b.transpose()
    } else {
        b.transpose() * b
    };
    let top = SymmetricEigen::new(small)
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max);
    top.max(0.0).sqrt()
}

/// Exact `delta_s` by enumerating every `s`-subset of columns.
pub fn delta_exhaustive(a: &MeasurementMatrix, s: usize, budget: u64) -> Result<f64, RipError> {
    delta_exhaustive_gram(&a.gram(), s, budget)
}

pub fn delta_exhaustive_gram(gram: &DMatrix<f64>, s: usize, budget: u64) -> Result<f64, RipError> {
    let m = gram.ncols();
    if s == 0 {
        return Ok(0.0);
    }
    if s > m {
        return Err(RipError::SizeTooLarge { s, s_prime: 0, m });
    }
    let required = binomial(m, s);
    if required > budget as u128 {
        return Err(RipError::BudgetExceeded { required, budget });
    }
    Ok((0..m)
        .combinations(s)
        .map(|t| subset_delta(gram, &t))
        .fold(0.0, f64::max))
}

/// Exact `theta_{s, s'}` over all disjoint pairs of column subsets.
pub fn theta_exhaustive(
    a: &MeasurementMatrix,
    s: usize,
    s_prime: usize,
    budget: u64,
) -> Result<f64, RipError> {
    theta_exhaustive_gram(&a.gram(), s, s_prime, budget)
}

pub fn theta_exhaustive_gram(
    gram: &DMatrix<f64>,
    s: usize,
    s_prime: usize,
    budget: u64,
) -> Result<f64, RipError> {
    let m = gram.ncols();
    if s == 0 || s_prime == 0 {
        return Ok(0.0);
    }
    if s + s_prime > m {
        return Err(RipError::SizeTooLarge { s, s_prime, m });
    }
    let required = binomial(m, s) * binomial(m - s, s_prime);
    if required > budget as u128 {
        return Err(RipError::BudgetExceeded { required, budget });
    }
    let mut best: f64 = 0.0;
    for t1 in (0..m).combinations(s) {
        let rest: Vec<usize> = (0..m).filter(|i| !t1.contains(i)).collect();
        for t2 in rest.into_iter().combinations(s_prime) {
            best = best.max(spectral_norm(&block(gram, &t1, &t2)));
        }
    }
    Ok(best)
}

/// Lower bound on `delta_s` from `trials` random subsets.
pub fn delta_sampled<R: Rng + ?Sized>(
    a: &MeasurementMatrix,
    s: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64, RipError> {
    delta_sampled_gram(&a.gram(), s, trials, rng)
}

pub fn delta_sampled_gram<R: Rng + ?Sized>(
    gram: &DMatrix<f64>,
    s: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64, RipError> {
    let m = gram.ncols();
    if s == 0 {
        return Ok(0.0);
    }
    if s > m {
        return Err(RipError::SizeTooLarge { s, s_prime: 0, m });
    }
    let mut best: f64 = 0.0;
    for _ in 0..trials {
        let mut t = sample(rng, m, s).into_vec();
        t.sort_unstable();
        best = best.max(subset_delta(gram, &t));
    }
    Ok(best)
}

/// Lower bound on `theta_{s, s'}` from `trials` random disjoint pairs.
pub fn theta_sampled<R: Rng + ?Sized>(
    a: &MeasurementMatrix,
    s: usize,
    s_prime: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64, RipError> {
    theta_sampled_gram(&a.gram(), s, s_prime, trials, rng)
}

pub fn theta_sampled_gram<R: Rng + ?Sized>(
    gram: &DMatrix<f64>,
    s: usize,
    s_prime: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64, RipError> {
    let m = gram.ncols();
    if s == 0 || s_prime == 0 {
        return Ok(0.0);
    }
    if s + s_prime > m {
        return Err(RipError::SizeTooLarge { s, s_prime, m });
    }
    let mut best: f64 = 0.0;
    for _ in 0..trials {
        let u = sample(rng, m, s + s_prime).into_vec();
        best = best.max(spectral_norm(&block(gram, &u[..s], &u[s..])));
    }
    Ok(best)
}

/// How missing table entries are filled in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RipMode {
    Exhaustive { budget: u64 },
    Sampled { trials: usize, seed: u64 },
}

impl Default for RipMode {
    fn default() -> Self {
        RipMode::Exhaustive {
            budget: DEFAULT_SUBSET_BUDGET,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawRipTable {
    digest: String,
    m: usize,
    delta: Vec<RawEntry>,
    theta: Vec<RawEntry>,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    s: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s_prime: Option<usize>,
    value: f64,
    exact: bool,
}

/// Cached `delta_s` and `theta_{s, s'}` values for one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRipTable", into = "RawRipTable")]
pub struct RipTable {
    digest: String,
    m: usize,
    delta: BTreeMap<usize, RipEntry>,
    theta: BTreeMap<(usize, usize), RipEntry>,
}

impl TryFrom<RawRipTable> for RipTable {
    type Error = RipError;

    fn try_from(raw: RawRipTable) -> Result<Self, RipError> {
        let mut t = RipTable::new(raw.digest, raw.m);
        let prov = |exact| {
            if exact {
                Provenance::Exact
            } else {
                Provenance::Sampled
            }
        };
        for e in raw.delta {
            t.insert_delta(
                e.s,
                RipEntry {
                    value: e.value,
                    provenance: prov(e.exact),
                },
            );
        }
        for e in raw.theta {
            let sp = e
                .s_prime
                .ok_or_else(|| RipError::Insufficient(format!("s_prime for theta entry s={}", e.s)))?;
            t.insert_theta(
                e.s,
                sp,
                RipEntry {
                    value: e.value,
                    provenance: prov(e.exact),
                },
            );
        }
        Ok(t)
    }
}

impl From<RipTable> for RawRipTable {
    fn from(t: RipTable) -> Self {
        RawRipTable {
            digest: t.digest,
            m: t.m,
            delta: t
                .delta
                .iter()
                .map(|(&s, e)| RawEntry {
                    s,
                    s_prime: None,
                    value: e.value,
                    exact: e.is_exact(),
                })
                .collect(),
            theta: t
                .theta
                .iter()
                .map(|(&(s, sp), e)| RawEntry {
                    s,
                    s_prime: Some(sp),
                    value: e.value,
                    exact: e.is_exact(),
                })
                .collect(),
        }
    }
}

impl RipTable {
    pub fn new(digest: impl Into<String>, m: usize) -> Self {
        Self {
            digest: digest.into(),
            m,
            delta: BTreeMap::new(),
            theta: BTreeMap::new(),
        }
    }

    pub fn for_matrix(a: &MeasurementMatrix) -> Self {
        Self::new(a.digest(), a.m())
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn insert_delta(&mut self, s: usize, e: RipEntry) {
        self.delta.insert(s, e);
    }

    /// Stores `theta_{s, s'}`; the key is symmetric.
    pub fn insert_theta(&mut self, s: usize, s_prime: usize, e: RipEntry) {
        self.theta.insert((s.min(s_prime), s.max(s_prime)), e);
    }

    pub fn delta(&self, s: usize) -> Option<RipEntry> {
        if s == 0 {
            return Some(RipEntry::exact(0.0));
        }
        self.delta.get(&s).copied()
    }

    pub fn theta(&self, s: usize, s_prime: usize) -> Option<RipEntry> {
        if s == 0 || s_prime == 0 {
            return Some(RipEntry::exact(0.0));
        }
        self.theta.get(&(s.min(s_prime), s.max(s_prime))).copied()
    }

    pub fn delta_value(&self, s: usize) -> Result<f64, RipError> {
        self.delta(s)
            .map(|e| e.value)
            .ok_or_else(|| RipError::Insufficient(format!("delta_{s}")))
    }

    pub fn theta_value(&self, s: usize, s_prime: usize) -> Result<f64, RipError> {
        self.theta(s, s_prime)
            .map(|e| e.value)
            .ok_or_else(|| RipError::Insufficient(format!("theta_{{{s},{s_prime}}}")))
    }

    /// True when every stored entry is an exact maximum.
    pub fn is_exact(&self) -> bool {
        self.delta.values().chain(self.theta.values()).all(|e| e.is_exact())
    }

    pub fn delta_entries(&self) -> impl Iterator<Item = (usize, RipEntry)> + '_ {
        self.delta.iter().map(|(&s, &e)| (s, e))
    }

    pub fn theta_entries(&self) -> impl Iterator<Item = ((usize, usize), RipEntry)> + '_ {
        self.theta.iter().map(|(&k, &e)| (k, e))
    }

    pub fn check_digest(&self, a: &MeasurementMatrix) -> Result<(), RipError> {
        let d = a.digest();
        if d != self.digest {
            return Err(RipError::DigestMismatch {
                table: self.digest.clone(),
                matrix: d,
            });
        }
        Ok(())
    }

    /// Checks `delta_s <= delta_s'` and `theta_{s,s'} <= theta_{s2,s2'}` for
    /// `s <= s2`, `s' <= s2'` among the stored exact entries.
    pub fn check_monotone(&self, tol: f64) -> Result<(), RipError> {
        let exact_delta: Vec<_> = self.delta.iter().filter(|(_, e)| e.is_exact()).collect();
        for w in exact_delta.windows(2) {
            let ((s1, e1), (s2, e2)) = (w[0], w[1]);
            if e1.value > e2.value + tol {
                return Err(RipError::NotMonotone(format!(
                    "delta_{s1}={} > delta_{s2}={}",
                    e1.value, e2.value
                )));
            }
        }
        let th: Vec<_> = self.theta.iter().filter(|(_, e)| e.is_exact()).collect();
        for &(&(a1, b1), e1) in &th {
            for &(&(a2, b2), e2) in &th {
                let dominated = (a1 <= a2 && b1 <= b2) || (a1 <= b2 && b1 <= a2);
                if dominated && e1.value > e2.value + tol {
                    return Err(RipError::NotMonotone(format!(
                        "theta_{{{a1},{b1}}}={} > theta_{{{a2},{b2}}}={}",
                        e1.value, e2.value
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Anything that can answer `delta_s` and `theta_{s, s'}` queries.
pub trait RipSource {
    fn m(&self) -> usize;
    fn delta(&mut self, s: usize) -> Result<RipEntry, RipError>;
    fn theta(&mut self, s: usize, s_prime: usize) -> Result<RipEntry, RipError>;
}

impl RipSource for RipTable {
    fn m(&self) -> usize {
        self.m
    }

    fn delta(&mut self, s: usize) -> Result<RipEntry, RipError> {
        RipTable::delta(self, s).ok_or_else(|| RipError::Insufficient(format!("delta_{s}")))
    }

    fn theta(&mut self, s: usize, s_prime: usize) -> Result<RipEntry, RipError> {
        RipTable::theta(self, s, s_prime)
            .ok_or_else(|| RipError::Insufficient(format!("theta_{{{s},{s_prime}}}")))
    }
}

impl RipSource for RipEstimator {
    fn m(&self) -> usize {
        self.gram.ncols()
    }

    fn delta(&mut self, s: usize) -> Result<RipEntry, RipError> {
        RipEstimator::delta(self, s)
    }

    fn theta(&mut self, s: usize, s_prime: usize) -> Result<RipEntry, RipError> {
        RipEstimator::theta(self, s, s_prime)
    }
}

/// Fills RIP table entries on demand for one matrix.
pub struct RipEstimator {
    gram: DMatrix<f64>,
    mode: RipMode,
    rng: ChaCha8Rng,
    table: RipTable,
}

impl RipEstimator {
    pub fn new(a: &MeasurementMatrix, mode: RipMode) -> Self {
        let seed = match mode {
            RipMode::Sampled { seed, .. } => seed,
            RipMode::Exhaustive { .. } => 0,
        };
        Self {
            gram: a.gram(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            table: RipTable::for_matrix(a),
        }
    }

    /// Starts from an existing cache; the digest must match.
    pub fn with_table(a: &MeasurementMatrix, mode: RipMode, table: RipTable) -> Result<Self, RipError> {
        table.check_digest(a)?;
        let mut e = Self::new(a, mode);
        e.table = table;
        Ok(e)
    }

    pub fn table(&self) -> &RipTable {
        &self.table
    }

    pub fn into_table(self) -> RipTable {
        self.table
    }

    pub fn delta(&mut self, s: usize) -> Result<RipEntry, RipError> {
        if let Some(e) = self.table.delta(s) {
            return Ok(e);
        }
        let e = match self.mode {
            RipMode::Exhaustive { budget } => {
                RipEntry::exact(delta_exhaustive_gram(&self.gram, s, budget)?)
            }
            RipMode::Sampled { trials, .. } => RipEntry {
                value: delta_sampled_gram(&self.gram, s, trials, &mut self.rng)?,
                provenance: Provenance::Sampled,
            },
        };
        self.table.insert_delta(s, e);
        Ok(e)
    }

    pub fn theta(&mut self, s: usize, s_prime: usize) -> Result<RipEntry, RipError> {
        if let Some(e) = self.table.theta(s, s_prime) {
            return Ok(e);
        }
        let e = match self.mode {
            RipMode::Exhaustive { budget } => {
                RipEntry::exact(theta_exhaustive_gram(&self.gram, s, s_prime, budget)?)
            }
            RipMode::Sampled { trials, .. } => RipEntry {
                value: theta_sampled_gram(&self.gram, s, s_prime, trials, &mut self.rng)?,
                provenance: Provenance::Sampled,
            },
        };
        self.table.insert_theta(s, s_prime, e);
        Ok(e)
    }
}

/// The sparsity levels `S*` and `S**`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Largest `S` with `delta_S < 1/2`.
    pub s_star: usize,
    /// Largest `S` with `delta_2S + theta_{S,2S} < 1`.
    pub s_star_star: usize,
}

/// Scans `S = 1, 2, ..` up to `limit`, stopping at the first failure.
///
/// Both conditions are monotone in `S`, so entries past the first failure are
/// never read. A missing entry before the first failure is an error. The
/// `S**` scan also stops once `3S` exceeds the signal dimension.
pub fn scan_thresholds<R: RipSource + ?Sized>(rip: &mut R, limit: usize) -> Result<Thresholds, RipError> {
    let limit = limit.min(rip.m());
    let mut s_star = 0;
    for s in 1..=limit {
        if rip.delta(s)?.value < 0.5 {
            s_star = s;
        } else {
            break;
        }
    }
    let mut s_star_star = 0;
    for s in 1..=limit {
        if 3 * s > rip.m() {
            break;
        }
        let v = rip.delta(2 * s)?.value + rip.theta(s, 2 * s)?.value;
        if v < 1.0 {
            s_star_star = s;
        } else {
            break;
        }
    }
    Ok(Thresholds {
        s_star,
        s_star_star,
    })
}

/// [`scan_thresholds`] over a fixed table.
pub fn thresholds(rip: &RipTable, limit: usize) -> Result<Thresholds, RipError> {
    scan_thresholds(&mut rip.clone(), limit)
}
