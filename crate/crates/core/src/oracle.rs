//! Slow, independent reference implementations for cross-checking the main code.
//!
//! Nothing here calls into the aggregator, attack or optimizer modules; each
//! routine is re-derived from its definition on plain `f64` slices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::tasks::Task;

pub const WEISZFELD_CAP: usize = 100_000;

/// Side-by-side comparison of reference and main values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub reference: Vec<f64>,
    pub main: Vec<f64>,
    pub max_abs: f64,
    pub max_rel: f64,
}

impl OracleReport {
    pub fn compare(reference: &[f64], main: &[f64]) -> Result<Self> {
        if reference.len() != main.len() {
            return Err(Error::DimensionMismatch {
                expected: reference.len(),
                got: main.len(),
            });
        }
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        for (r, m) in reference.iter().zip(main) {
            let d = (r - m).abs();
            if !d.is_finite() {
                return Err(Error::NonFinite("oracle comparison"));
            }
            max_abs = max_abs.max(d);
            max_rel = max_rel.max(d / r.abs().max(m.abs()).max(f64::MIN_POSITIVE));
        }
        Ok(Self {
            reference: reference.to_vec(),
            main: main.to_vec(),
            max_abs,
            max_rel,
        })
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn sum_dist(v: &[f64], pts: &[Vec<f64>]) -> f64 {
    pts.iter().map(|p| dist(v, p)).sum()
}

fn as_rows(points: &[ParamVector]) -> Result<Vec<Vec<f64>>> {
    let d = points.first().ok_or(Error::EmptyInput)?.dim();
    points
        .iter()
        .map(|p| {
            if p.dim() != d {
                Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.dim(),
                })
            } else {
                Ok(p.as_slice().to_vec())
            }
        })
        .collect()
}

/// Geometric median by unsmoothed Weiszfeld iterations, started at the mean.
///
/// When an iterate lands on input points it either certifies optimality
/// (the pull of the remaining points is at most their multiplicity) or takes
/// the damped step of Vardi and Zhang. Stops once an update moves less than `tol`.
pub fn geometric_median(points: &[ParamVector], tol: f64) -> Result<ParamVector> {
    let pts = as_rows(points)?;
    let d = pts[0].len();
    let mut v: Vec<f64> = (0..d)
        .map(|k| pts.iter().map(|p| p[k]).sum::<f64>() / pts.len() as f64)
        .collect();
    for _ in 0..WEISZFELD_CAP {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        let mut pull = vec![0.0; d];
        let mut coincide = 0usize;
        for p in &pts {
            let r = dist(&v, p);
            if r == 0.0 {
                coincide += 1;
                continue;
            }
            for k in 0..d {
                num[k] += p[k] / r;
                pull[k] += (p[k] - v[k]) / r;
            }
            den += 1.0 / r;
        }
        if den == 0.0 {
            // every point sits at v
            return ParamVector::new(v);
        }
        let target: Vec<f64> = num.iter().map(|x| x / den).collect();
        let next = if coincide == 0 {
            target
        } else {
            let r = pull.iter().map(|x| x * x).sum::<f64>().sqrt();
            if r <= coincide as f64 {
                return ParamVector::new(v);
            }
            let gamma = coincide as f64 / r;
            target
                .iter()
                .zip(&v)
                .map(|(t, y)| (1.0 - gamma) * t + gamma * y)
                .collect()
        };
        let moved = dist(&next, &v);
        v = next;
        if moved < tol {
            return ParamVector::new(v);
        }
    }
    Err(Error::NotConverged {
        iters: WEISZFELD_CAP,
        best: ParamVector::from_untrusted(v),
    })
}

/// Two-dimensional geometric median by coarse-to-fine grid search.
pub fn grid_geometric_median_2d(points: &[ParamVector], rounds: usize) -> Result<ParamVector> {
    let pts = as_rows(points)?;
    if pts[0].len() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: pts[0].len(),
        });
    }
    let lo = |k: usize| pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
    let hi = |k: usize| pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
    let mut center = [(lo(0) + hi(0)) / 2.0, (lo(1) + hi(1)) / 2.0];
    let mut half = ((hi(0) - lo(0)).max(hi(1) - lo(1)) / 2.0).max(1e-12);
    const STEPS: i32 = 20;
    for _ in 0..rounds {
        let mut best = (f64::INFINITY, center);
        for i in -STEPS..=STEPS {
            for j in -STEPS..=STEPS {
                let c = [
                    center[0] + half * i as f64 / STEPS as f64,
                    center[1] + half * j as f64 / STEPS as f64,
                ];
                let f = sum_dist(&c, &pts);
                if f < best.0 {
                    best = (f, c);
                }
            }
        }
        center = best.1;
        half *= 0.25;
    }
    ParamVector::new(center.to_vec())
}

/// Krum scores recomputed from scratch: for each point, the sum of its
/// `n − q − 2` smallest squared distances to the other points.
pub fn krum_scores(points: &[ParamVector], q: usize) -> Result<Vec<f64>> {
    let pts = as_rows(points)?;
    let n = pts.len();
    if n < q + 3 {
        return Err(Error::KrumTooFewInputs { n, q });
    }
    let keep = n - q - 2;
    Ok((0..n)
        .map(|i| {
            let mut ds: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    pts[i]
                        .iter()
                        .zip(&pts[j])
                        .map(|(a, b)| (a - b).powi(2))
                        .sum()
                })
                .collect();
            ds.sort_by(f64::total_cmp);
            ds[..keep].iter().sum()
        })
        .collect())
}

/// Index of the smallest score, lowest index on ties.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// `erf` from its Maclaurin series for small arguments and a continued
/// fraction for `erfc` in the tails.
pub fn erf(x: f64) -> f64 {
    if x.abs() > 3.0 {
        let c = erfc_tail(x.abs());
        return if x > 0.0 { 1.0 - c } else { c - 1.0 };
    }
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= -x2 / n;
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

/// `erfc(x)` for `x > 0` via the Laplace continued fraction, evaluated backwards.
fn erfc_tail(x: f64) -> f64 {
    let mut f = 0.0;
    for k in (1..=60).rev() {
        f = (k as f64 / 2.0) / (x + f);
    }
    (-x * x).exp() / (std::f64::consts::PI.sqrt() * (x + f))
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Inverse standard normal CDF by bisection until `|Φ(z) − p| < 1e−10`.
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "probability {p} outside (0, 1)"
        )));
    }
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    let mut mid = 0.0;
    for _ in 0..400 {
        mid = 0.5 * (lo + hi);
        let f = normal_cdf(mid) - p;
        if f.abs() < 1e-10 && hi - lo < 1e-10 {
            break;
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// Leading unit eigenvector of a symmetric matrix by power iteration on a
/// shifted copy, so the algebraically largest eigenvalue dominates. The sign is
/// fixed so the first non-negligible coordinate is positive.
pub fn top_eigenvector(matrix: &[Vec<f64>]) -> Result<ParamVector> {
    let d = matrix.len();
    if d == 0 {
        return Err(Error::EmptyInput);
    }
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        for j in 0..d {
            if (row[j] - matrix[j][i]).abs() > 1e-12 * (1.0 + row[j].abs()) {
                return Err(Error::InvalidParameter("matrix is not symmetric".into()));
            }
        }
    }
    let shift: f64 = matrix.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    // a start vector unlikely to be orthogonal to the answer
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
    normalize(&mut v);
    for _ in 0..200_000 {
        let mut w: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| matrix[i][j] * v[j]).sum::<f64>() + shift * v[i])
            .collect();
        if normalize(&mut w) == 0.0 {
            break;
        }
        let change = dist(&w, &v);
        v = w;
        if change < 1e-12 {
            break;
        }
    }
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-9) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    ParamVector::new(v)
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Central-difference gradient of an arbitrary scalar function.
pub fn finite_diff<F: Fn(&ParamVector) -> f64>(
    f: F,
    x: &ParamVector,
    h: f64,
) -> Result<ParamVector> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter("step h must be positive".into()));
    }
    let g = (0..x.dim())
        .map(|k| {
            let mut up = x.clone();
            up.as_mut_slice()[k] += h;
            let mut down = x.clone();
            down.as_mut_slice()[k] -= h;
            (f(&up) - f(&down)) / (2.0 * h)
        })
        .collect();
    Ok(ParamVector::from_untrusted(g))
}

/// Central-difference gradient of a task's loss; `h = 1e-4` is the usual step.
pub fn finite_diff_gradient(task: &dyn Task, x: &ParamVector, h: f64) -> Result<ParamVector> {
    finite_diff(|y| task.loss(y), x, h)
}
