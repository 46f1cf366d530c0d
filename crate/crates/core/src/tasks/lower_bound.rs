//! Pair of one-dimensional instances that no algorithm can tell apart.
//!
//! Both instances use the same multiset of worker functions: `δn` shifted
//! quadratics `(μ/2)x² − ζδ^{−1/2}x` and `(1 − δ)n` plain ones `(μ/2)x²`. In the
//! first instance every worker is good; in the second the shifted workers are
//! Byzantine. The optima differ by `G/μ` with `G = ζ√δ`.

use super::QuadraticTask;
use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Clone, Debug, PartialEq)]
pub struct LowerBoundPair {
    pub mu: f64,
    pub zeta: f64,
    pub delta: f64,
    pub n: usize,
    /// Number of shifted workers, `δn`.
    pub shifted: usize,
}

pub fn make_lower_bound_pair(mu: f64, zeta: f64, delta: f64, n: usize) -> Result<LowerBoundPair> {
    if !(mu > 0.0) || !(zeta > 0.0) || !(delta > 0.0 && delta < 0.5) || n == 0 {
        return Err(Error::InvalidParameter(
            "lower-bound pair needs mu > 0, zeta > 0, 0 < delta < 1/2, n >= 1".into(),
        ));
    }
    let count = delta * n as f64;
    let shifted = count.round();
    if (count - shifted).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "delta * n = {count} is not an integer"
        )));
    }
    Ok(LowerBoundPair {
        mu,
        zeta,
        delta,
        n,
        shifted: shifted as usize,
    })
}

impl LowerBoundPair {
    /// `G = ζ√δ`.
    pub fn g(&self) -> f64 {
        self.zeta * self.delta.sqrt()
    }

    /// Minimiser of the shifted worker function.
    fn shifted_center(&self) -> f64 {
        self.zeta / self.delta.sqrt() / self.mu
    }

    /// The `n` worker functions as quadratics `(μ/2)(x − b_j)²`, shifted workers first.
    /// These are the messages an algorithm sees under either instance.
    pub fn worker_functions(&self) -> Result<QuadraticTask> {
        let centers = (0..self.n)
            .map(|j| {
                let b = if j < self.shifted {
                    self.shifted_center()
                } else {
                    0.0
                };
                ParamVector::new(vec![b])
            })
            .collect::<Result<Vec<_>>>()?;
        QuadraticTask::with_curvature(centers, self.mu, 0.0)
    }

    /// Instance `k ∈ {1, 2}` restricted to its good workers.
    pub fn instance(&self, k: u8) -> Result<QuadraticTask> {
        let all = self.worker_functions()?;
        match k {
            1 => Ok(all),
            2 => {
                let good = all.centers()[self.shifted..].to_vec();
                QuadraticTask::with_curvature(good, self.mu, 0.0)
            }
            _ => Err(Error::InvalidParameter(format!(
                "instance {k} not in {{1, 2}}"
            ))),
        }
    }

    /// Optimum of instance `k`: `G/μ` for the first, `0` for the second.
    pub fn optimum(&self, k: u8) -> f64 {
        if k == 1 {
            self.g() / self.mu
        } else {
            0.0
        }
    }

    /// `f^k(x) − f^k(x⋆_k) = (μ/2)(x − x⋆_k)²`.
    pub fn suboptimality(&self, k: u8, x: f64) -> f64 {
        0.5 * self.mu * (x - self.optimum(k)).powi(2)
    }

    /// `‖∇f^k(x)‖² = μ²(x − x⋆_k)²`.
    pub fn grad_norm_sq(&self, k: u8, x: f64) -> f64 {
        (self.mu * (x - self.optimum(k))).powi(2)
    }
}
