//! Shared numeric types: parameter vectors, worker identities and cohorts.
//!
//! Every reduction in this module walks its inputs in ascending index order so
//! results never depend on how callers scheduled the work that produced them.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat real vector holding model parameters, gradients or momenta.
///
/// Vectors built with [`ParamVector::new`] are guaranteed finite. Byzantine
/// payloads can be wrapped with [`ParamVector::from_untrusted`], which skips the
/// check; aggregators re-validate their inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self(values))
    }

    /// Wraps values received from an untrusted worker without validation.
    pub fn from_untrusted(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

impl fmt::Display for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "]")
    }
}

/// Index of a worker in `[0, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorkerId(pub usize);

/// Message a worker sends to the server in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerMessage {
    pub worker: WorkerId,
    pub payload: ParamVector,
}

/// Partition of `n` workers into good and Byzantine ones, fixed for a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    n: usize,
    byzantine: BTreeSet<WorkerId>,
}

impl CohortSpec {
    /// Cohort whose Byzantine workers occupy the last `q` indices.
    pub fn new(n: usize, q: usize) -> Result<Self> {
        Self::with_byzantine(n, (n.saturating_sub(q)..n).map(WorkerId))
    }

    pub fn with_byzantine(n: usize, byzantine: impl IntoIterator<Item = WorkerId>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("cohort needs n >= 1".into()));
        }
        let byzantine: BTreeSet<WorkerId> = byzantine.into_iter().collect();
        if let Some(w) = byzantine.iter().find(|w| w.0 >= n) {
            return Err(Error::InvalidParameter(format!(
                "worker {} outside [0, {n})",
                w.0
            )));
        }
        if 2 * byzantine.len() >= n {
            return Err(Error::InvalidParameter(format!(
                "Byzantine fraction {}/{n} must stay below 1/2",
                byzantine.len()
            )));
        }
        Ok(Self { n, byzantine })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.byzantine.len()
    }

    pub fn delta(&self) -> f64 {
        self.q() as f64 / self.n as f64
    }

    pub fn is_byzantine(&self, w: WorkerId) -> bool {
        self.byzantine.contains(&w)
    }

    pub fn byzantine(&self) -> impl Iterator<Item = WorkerId> + '_ {
        self.byzantine.iter().copied()
    }

    /// Good workers in ascending index order.
    pub fn good(&self) -> Vec<WorkerId> {
        (0..self.n)
            .map(WorkerId)
            .filter(|w| !self.byzantine.contains(w))
            .collect()
    }
}

fn common_dim(vs: &[ParamVector]) -> Result<usize> {
    let first = vs.first().ok_or(Error::EmptyInput)?;
    let d = first.dim();
    for v in &vs[1..] {
        v.check_dim(d)?;
    }
    Ok(d)
}

/// Coordinate-wise arithmetic mean.
pub fn mean(vs: &[ParamVector]) -> Result<ParamVector> {
    let d = common_dim(vs)?;
    let mut acc = vec![0.0; d];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let inv = 1.0 / vs.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(ParamVector(acc))
}

/// Mean of the vectors at `indices`.
pub fn mean_of(vs: &[ParamVector], indices: &[usize]) -> Result<ParamVector> {
    if indices.is_empty() {
        return Err(Error::EmptyInput);
    }
    let d = common_dim(vs)?;
    let mut acc = vec![0.0; d];
    for &i in indices {
        let v = vs.get(i).ok_or_else(|| {
            Error::InvalidParameter(format!("index {i} out of range for {} vectors", vs.len()))
        })?;
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let inv = 1.0 / indices.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(ParamVector(acc))
}

/// Symmetric matrix of squared Euclidean distances, row-major `n x n`.
pub fn pairwise_sq_dists(vs: &[ParamVector]) -> Result<Vec<Vec<f64>>> {
    if vs.len() < 2 {
        return Err(Error::InvalidParameter(
            "pairwise distances need at least 2 vectors".into(),
        ));
    }
    common_dim(vs)?;
    let n = vs.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = vs[i].dist_sq(&vs[j]);
            out[i][j] = d;
            out[j][i] = d;
        }
    }
    Ok(out)
}

/// Mean of `‖v_i − v_j‖²` over unordered pairs drawn from `good`.
pub fn empirical_pairwise_variance(vs: &[ParamVector], good: &[usize]) -> Result<f64> {
    if good.len() < 2 {
        return Err(Error::TooFewGood);
    }
    common_dim(vs)?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, &i) in good.iter().enumerate() {
        for &j in &good[a + 1..] {
            total += vs[i].dist_sq(&vs[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean(&[pv(&[1.0, 3.0])]).unwrap(), pv(&[1.0, 3.0]));
        assert_eq!(
            mean(&[pv(&[0.0, 0.0]), pv(&[2.0, 4.0])]).unwrap(),
            pv(&[1.0, 2.0])
        );
        let m = mean(&[pv(&[1.0]), pv(&[2.0]), pv(&[3.0]), pv(&[10.0])]).unwrap();
        assert_eq!(m, pv(&[4.0]));
    }

    #[test]
    fn mean_errors() {
        assert!(matches!(mean(&[]), Err(Error::EmptyInput)));
        assert!(matches!(
            mean(&[pv(&[1.0]), pv(&[1.0, 2.0])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ParamVector::new(vec![f64::NAN]).is_err());
        assert!(ParamVector::new(vec![1.0, f64::INFINITY]).is_err());
        assert!(!ParamVector::from_untrusted(vec![f64::NAN]).is_finite());
    }

    #[test]
    fn pairwise_examples() {
        let m = pairwise_sq_dists(&[pv(&[0.0]), pv(&[3.0])]).unwrap();
        assert_eq!(m, vec![vec![0.0, 9.0], vec![9.0, 0.0]]);
        let m = pairwise_sq_dists(&[pv(&[0.0, 0.0]), pv(&[3.0, 4.0])]).unwrap();
        assert_eq!(m[0][1], 25.0);
        let m = pairwise_sq_dists(&[pv(&[1.0]), pv(&[1.0]), pv(&[1.0])]).unwrap();
        assert!(m.iter().flatten().all(|&x| x == 0.0));
        assert!(pairwise_sq_dists(&[pv(&[1.0])]).is_err());
    }

    #[test]
    fn pairwise_variance_examples() {
        assert_eq!(
            empirical_pairwise_variance(&[pv(&[0.0]), pv(&[2.0])], &[0, 1]).unwrap(),
            4.0
        );
        let zeros = vec![pv(&[0.0]); 3];
        assert_eq!(
            empirical_pairwise_variance(&zeros, &[0, 1, 2]).unwrap(),
            0.0
        );
        let v = [pv(&[0.0]), pv(&[1.0]), pv(&[2.0])];
        assert_eq!(empirical_pairwise_variance(&v, &[0, 1, 2]).unwrap(), 2.0);
        assert!(matches!(
            empirical_pairwise_variance(&v, &[1]),
            Err(Error::TooFewGood)
        ));
    }

    #[test]
    fn cohort_basics() {
        let c = CohortSpec::new(25, 5).unwrap();
        assert_eq!(c.q(), 5);
        assert!((c.delta() - 0.2).abs() < 1e-15);
        assert!(c.is_byzantine(WorkerId(24)));
        assert!(!c.is_byzantine(WorkerId(0)));
        assert_eq!(c.good().len(), 20);
        assert!(CohortSpec::new(10, 5).is_err());
    }

    fn vecs(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-100.0f64..100.0, d), n)
    }

    proptest! {
        #[test]
        fn mean_translation_equivariant(vs in vecs(5, 3), c in prop::collection::vec(-50.0f64..50.0, 3)) {
            let vs: Vec<ParamVector> = vs.into_iter().map(|v| pv(&v)).collect();
            let c = pv(&c);
            let shifted: Vec<ParamVector> = vs.iter().map(|v| v.add(&c)).collect();
            let lhs = mean(&shifted).unwrap();
            let rhs = mean(&vs).unwrap().add(&c);
            for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn mean_permutation_invariant(vs in vecs(6, 2)) {
            let vs: Vec<ParamVector> = vs.into_iter().map(|v| pv(&v)).collect();
            let mut rev = vs.clone();
            rev.reverse();
            let a = mean(&vs).unwrap();
            let b = mean(&rev).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn pairwise_is_a_squared_metric(vs in vecs(5, 3)) {
            let vs: Vec<ParamVector> = vs.into_iter().map(|v| pv(&v)).collect();
            let m = pairwise_sq_dists(&vs).unwrap();
            for i in 0..5 {
                prop_assert_eq!(m[i][i], 0.0);
                for j in 0..5 {
                    prop_assert!(m[i][j] >= 0.0);
                    prop_assert_eq!(m[i][j], m[j][i]);
                    prop_assert_eq!(m[i][j] == 0.0, vs[i] == vs[j]);
                }
            }
        }
    }
}
