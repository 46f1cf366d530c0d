use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::Task;
use crate::error::{Error, Result};
use crate::params::ParamVector;

/// One worker's linear system `A x ≈ y`, rows stored densely.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerSystem {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl WorkerSystem {
    fn residual(&self, r: usize, x: &[f64]) -> f64 {
        self.rows[r].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.targets[r]
    }
}

/// `f_j(x) = 1/(2k) ‖A_j x − y_j‖²`; stochastic gradients use a minibatch of
/// rows sampled with replacement.
#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquaresTask {
    systems: Vec<WorkerSystem>,
    dim: usize,
    batch: usize,
    optimum: Option<ParamVector>,
}

impl LeastSquaresTask {
    pub fn from_systems(systems: Vec<WorkerSystem>, batch: usize) -> Result<Self> {
        let first = systems.first().ok_or(Error::EmptyInput)?;
        let dim = first.rows.first().ok_or(Error::EmptyInput)?.len();
        for s in &systems {
            if s.rows.is_empty() || s.rows.len() != s.targets.len() {
                return Err(Error::InvalidParameter(
                    "each worker needs matching, nonempty rows and targets".into(),
                ));
            }
            if let Some(r) = s.rows.iter().find(|r| r.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
        }
        if batch == 0 {
            return Err(Error::InvalidParameter("batch must be >= 1".into()));
        }
        Ok(Self {
            systems,
            dim,
            batch,
            optimum: None,
        })
    }

    pub fn systems(&self) -> &[WorkerSystem] {
        &self.systems
    }

    fn worker_loss(&self, j: usize, x: &[f64]) -> f64 {
        let s = &self.systems[j];
        let k = s.rows.len() as f64;
        (0..s.rows.len())
            .map(|r| s.residual(r, x).powi(2))
            .sum::<f64>()
            / (2.0 * k)
    }
}

/// Consistent systems sharing one solution `x⋆`, so every worker gradient
/// vanishes at `x⋆`. Entries are `N(0, nk/d)` so the averaged Hessian has
/// eigenvalues near 1 on its range. `noise > 0` perturbs the targets.
pub fn make_consistent_least_squares(
    n: usize,
    d: usize,
    samples_per_worker: usize,
    noise: f64,
    batch: usize,
    rng: &mut dyn RngCore,
) -> Result<LeastSquaresTask> {
    if n == 0 || samples_per_worker == 0 {
        return Err(Error::InvalidParameter(
            "need n >= 1 and samples_per_worker >= 1".into(),
        ));
    }
    if d < n * samples_per_worker {
        return Err(Error::InfeasibleDimensions(format!(
            "d = {d} < n * samples_per_worker = {}",
            n * samples_per_worker
        )));
    }
    let sd = ((n * samples_per_worker) as f64 / d as f64).sqrt();
    let x_star: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let systems = (0..n)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..samples_per_worker)
                .map(|_| {
                    (0..d)
                        .map(|_| {
                            let e: f64 = StandardNormal.sample(rng);
                            sd * e
                        })
                        .collect()
                })
                .collect();
            let targets = rows
                .iter()
                .map(|r| {
                    let clean: f64 = r.iter().zip(&x_star).map(|(a, b)| a * b).sum();
                    let e: f64 = StandardNormal.sample(rng);
                    clean + noise * e
                })
                .collect();
            WorkerSystem { rows, targets }
        })
        .collect();
    let mut task = LeastSquaresTask::from_systems(systems, batch.min(samples_per_worker))?;
    if noise == 0.0 {
        task.optimum = Some(ParamVector::new(x_star)?);
    }
    Ok(task)
}

impl Task for LeastSquaresTask {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_workers(&self) -> usize {
        self.systems.len()
    }

    fn loss(&self, x: &ParamVector) -> f64 {
        (0..self.systems.len())
            .map(|j| self.worker_loss(j, x.as_slice()))
            .sum::<f64>()
            / self.systems.len() as f64
    }

    fn worker_full_gradient(&self, worker: usize, x: &ParamVector) -> ParamVector {
        let s = &self.systems[worker];
        let mut g = vec![0.0; self.dim];
        for (r, row) in s.rows.iter().enumerate() {
            let res = s.residual(r, x.as_slice());
            for (gi, a) in g.iter_mut().zip(row) {
                *gi += res * a;
            }
        }
        let k = s.rows.len() as f64;
        g.iter_mut().for_each(|v| *v /= k);
        ParamVector::from_untrusted(g)
    }

    fn worker_stoch_gradient(
        &self,
        worker: usize,
        x: &ParamVector,
        rng: &mut dyn RngCore,
    ) -> ParamVector {
        let s = &self.systems[worker];
        let mut g = vec![0.0; self.dim];
        for _ in 0..self.batch {
            let r = rng.random_range(0..s.rows.len());
            let res = s.residual(r, x.as_slice());
            for (gi, a) in g.iter_mut().zip(&s.rows[r]) {
                *gi += res * a;
            }
        }
        let b = self.batch as f64;
        g.iter_mut().for_each(|v| *v /= b);
        ParamVector::from_untrusted(g)
    }

    fn optimum(&self) -> Option<ParamVector> {
        self.optimum.clone()
    }
}
