//! Index sets and sparse signal vectors.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SupportError {
    #[error("index {index} out of range for dimension {dim}")]
    OutOfRange { index: usize, dim: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("order statistic {k} requested from a set of {len} entries")]
    OrderOutOfRange { k: usize, len: usize },
}

/// A sorted, duplicate-free subset of `{0, .., dim - 1}`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSupport", into = "RawSupport")]
pub struct SupportSet {
    dim: usize,
    indices: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawSupport {
    dim: usize,
    indices: Vec<usize>,
}

impl TryFrom<RawSupport> for SupportSet {
    type Error = SupportError;

    fn try_from(raw: RawSupport) -> Result<Self, Self::Error> {
        SupportSet::new(raw.dim, raw.indices)
    }
}

impl From<SupportSet> for RawSupport {
    fn from(s: SupportSet) -> Self {
        RawSupport {
            dim: s.dim,
            indices: s.indices,
        }
    }
}

impl fmt::Debug for SupportSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SupportSet(dim={}, {:?})", self.dim, self.indices)
    }
}

impl SupportSet {
    /// Builds a set from arbitrary indices; duplicates are merged.
    pub fn new(dim: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self, SupportError> {
        let mut v: Vec<usize> = indices.into_iter().collect();
        if let Some(&index) = v.iter().find(|&&i| i >= dim) {
            return Err(SupportError::OutOfRange { index, dim });
        }
        v.sort_unstable();
        v.dedup();
        Ok(Self { dim, indices: v })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
        }
    }

    pub fn full(dim: usize) -> Self {
        Self {
            dim,
            indices: (0..dim).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    fn check_dim(&self, other: &SupportSet) -> Result<(), SupportError> {
        if self.dim != other.dim {
            return Err(SupportError::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(())
    }

    pub fn union(&self, other: &SupportSet) -> Result<SupportSet, SupportError> {
        self.check_dim(other)?;
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.indices, &other.indices);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push(a[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Ok(SupportSet {
            dim: self.dim,
            indices: out,
        })
    }

    pub fn intersection(&self, other: &SupportSet) -> Result<SupportSet, SupportError> {
        self.check_dim(other)?;
        let indices = self.iter().filter(|&i| other.contains(i)).collect();
        Ok(SupportSet {
            dim: self.dim,
            indices,
        })
    }

    /// Elements of `self` not in `other`.
    pub fn difference(&self, other: &SupportSet) -> Result<SupportSet, SupportError> {
        self.check_dim(other)?;
        let indices = self.iter().filter(|&i| !other.contains(i)).collect();
        Ok(SupportSet {
            dim: self.dim,
            indices,
        })
    }

    pub fn complement(&self) -> SupportSet {
        let indices = (0..self.dim).filter(|&i| !self.contains(i)).collect();
        SupportSet {
            dim: self.dim,
            indices,
        }
    }

    pub fn is_subset(&self, other: &SupportSet) -> bool {
        self.dim == other.dim && self.iter().all(|i| other.contains(i))
    }
}

/// A dense real vector carrying a sparse signal.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct SignalVector {
    values: DVector<f64>,
}

impl From<Vec<f64>> for SignalVector {
    fn from(v: Vec<f64>) -> Self {
        Self {
            values: DVector::from_vec(v),
        }
    }
}

impl From<SignalVector> for Vec<f64> {
    fn from(s: SignalVector) -> Self {
        s.values.as_slice().to_vec()
    }
}

impl From<DVector<f64>> for SignalVector {
    fn from(values: DVector<f64>) -> Self {
        Self { values }
    }
}

impl fmt::Debug for SignalVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SignalVector({:?})", self.values.as_slice())
    }
}

impl SignalVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            values: DVector::zeros(dim),
        }
    }

    /// Scatters `values` into the positions listed by `support`.
    pub fn from_support(support: &SupportSet, values: &[f64]) -> Result<Self, SupportError> {
        if support.len() != values.len() {
            return Err(SupportError::DimensionMismatch {
                left: support.len(),
                right: values.len(),
            });
        }
        let mut v = DVector::zeros(support.dim());
        for (i, &x) in support.iter().zip(values) {
            v[i] = x;
        }
        Ok(Self { values: v })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_dvector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn set(&mut self, i: usize, v: f64) {
        self.values[i] = v;
    }

    /// Indices of the nonzero entries.
    pub fn support(&self) -> SupportSet {
        SupportSet {
            dim: self.dim(),
            indices: (0..self.dim()).filter(|&i| self.values[i] != 0.0).collect(),
        }
    }

    /// Entries on `set`, in ascending index order.
    pub fn restrict(&self, set: &SupportSet) -> Vec<f64> {
        set.iter().map(|i| self.values[i]).collect()
    }

    /// Copy with every entry outside `set` zeroed.
    pub fn masked(&self, set: &SupportSet) -> SignalVector {
        let mut v = DVector::zeros(self.dim());
        for i in set.iter() {
            v[i] = self.values[i];
        }
        SignalVector { values: v }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.norm_squared()
    }

    pub fn norm_sq_on(&self, set: &SupportSet) -> f64 {
        set.iter().map(|i| self.values[i] * self.values[i]).sum()
    }

    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sq_dist(&self, other: &SignalVector) -> f64 {
        (&self.values - &other.values).norm_squared()
    }

    pub fn sub(&self, other: &SignalVector) -> SignalVector {
        SignalVector {
            values: &self.values - &other.values,
        }
    }

    pub fn add(&self, other: &SignalVector) -> SignalVector {
        SignalVector {
            values: &self.values + &other.values,
        }
    }
}

/// Indices of `set` ordered by decreasing `|v_i|`; ties keep the smaller index first.
pub fn magnitude_order(v: &SignalVector, set: &SupportSet) -> Vec<usize> {
    let mut idx: Vec<usize> = set.iter().collect();
    idx.sort_by(|&a, &b| {
        v.get(b)
            .abs()
            .partial_cmp(&v.get(a).abs())
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// The `k`-th largest magnitude on `set` (1-based) and the index holding it.
pub fn kth_largest_magnitude(
    v: &SignalVector,
    set: &SupportSet,
    k: usize,
) -> Result<(usize, f64), SupportError> {
    if k == 0 || k > set.len() {
        return Err(SupportError::OrderOutOfRange { k, len: set.len() });
    }
    let order = magnitude_order(v, set);
    let i = order[k - 1];
    Ok((i, v.get(i).abs()))
}

/// The `s` smallest-magnitude entries of `v` on `set` and their squared norm.
///
/// `s == 0` yields the empty set; `s > |set|` is an error.
pub fn smallest_k(
    v: &SignalVector,
    set: &SupportSet,
    s: usize,
) -> Result<(SupportSet, f64), SupportError> {
    if s > set.len() {
        return Err(SupportError::OrderOutOfRange { k: s, len: set.len() });
    }
    let order = magnitude_order(v, set);
    let chosen = &order[order.len() - s..];
    let sub = SupportSet::new(set.dim(), chosen.iter().copied())?;
    let energy = v.norm_sq_on(&sub);
    Ok((sub, energy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_algebra() {
        let a = SupportSet::new(10, [3, 1, 5, 1]).unwrap();
        let b = SupportSet::new(10, [5, 7]).unwrap();
        assert_eq!(a.as_slice(), &[1, 3, 5]);
        assert_eq!(a.union(&b).unwrap().as_slice(), &[1, 3, 5, 7]);
        assert_eq!(a.intersection(&b).unwrap().as_slice(), &[5]);
        assert_eq!(a.difference(&b).unwrap().as_slice(), &[1, 3]);
        assert_eq!(b.complement().len(), 8);
    }

    #[test]
    fn out_of_range_rejected() {
        assert_eq!(
            SupportSet::new(4, [4]),
            Err(SupportError::OutOfRange { index: 4, dim: 4 })
        );
        let a = SupportSet::empty(3);
        let b = SupportSet::empty(4);
        assert!(a.union(&b).is_err());
    }

    #[test]
    fn smallest_two_of_four() {
        let v = SignalVector::from(vec![5.0, -1.0, 3.0, 2.0]);
        let set = SupportSet::full(4);
        let (s, e) = smallest_k(&v, &set, 2).unwrap();
        assert_eq!(s.as_slice(), &[1, 3]);
        assert_eq!(e, 5.0);
        let (s0, e0) = smallest_k(&v, &set, 0).unwrap();
        assert!(s0.is_empty());
        assert_eq!(e0, 0.0);
        assert!(smallest_k(&v, &set, 5).is_err());
    }

    #[test]
    fn order_statistics_break_ties_on_index() {
        let v = SignalVector::from(vec![1.0, -2.0, 2.0, 0.5]);
        let set = SupportSet::full(4);
        assert_eq!(kth_largest_magnitude(&v, &set, 1).unwrap(), (1, 2.0));
        assert_eq!(kth_largest_magnitude(&v, &set, 2).unwrap(), (2, 2.0));
        assert!(kth_largest_magnitude(&v, &set, 0).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let s = SupportSet::new(6, [0, 4]).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        let back: SupportSet = serde_json::from_str(&j).unwrap();
        assert_eq!(s, back);
        let bad = r#"{"dim":2,"indices":[3]}"#;
        assert!(serde_json::from_str::<SupportSet>(bad).is_err());
        let v = SignalVector::from(vec![1.0, 0.0, -2.5]);
        let j = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<SignalVector>(&j).unwrap(), v);
    }
}
