use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use super::Task;
use crate::error::{Error, Result};
use crate::params::{self, ParamVector};

/// `f_j(x) = (μ/2)‖x − b_j‖²` with isotropic Gaussian gradient noise of total
/// variance `σ²`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTask {
    centers: Vec<ParamVector>,
    curvature: f64,
    noise: f64,
    dim: usize,
    start: Option<ParamVector>,
}

impl QuadraticTask {
    pub fn new(centers: Vec<ParamVector>, noise: f64) -> Result<Self> {
        Self::with_curvature(centers, 1.0, noise)
    }

    pub fn with_curvature(centers: Vec<ParamVector>, curvature: f64, noise: f64) -> Result<Self> {
        let dim = centers.first().ok_or(Error::EmptyInput)?.dim();
        for c in &centers {
            c.check_dim(dim)?;
        }
        if !(curvature > 0.0) || !(noise >= 0.0) {
            return Err(Error::InvalidParameter(
                "quadratic task needs curvature > 0 and noise >= 0".into(),
            ));
        }
        Ok(Self {
            centers,
            curvature,
            noise,
            dim,
            start: None,
        })
    }

    /// Centers drawn i.i.d. `N(0, ζ²/d · I)` and then recentered and rescaled
    /// so the empirical heterogeneity is exactly `ζ²`.
    pub fn random(
        workers: usize,
        dim: usize,
        zeta_sq: f64,
        noise: f64,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        if workers == 0 || dim == 0 {
            return Err(Error::InvalidParameter(
                "need workers >= 1 and dim >= 1".into(),
            ));
        }
        let raw: Vec<ParamVector> = (0..workers)
            .map(|_| {
                ParamVector::from_untrusted((0..dim).map(|_| StandardNormal.sample(rng)).collect())
            })
            .collect();
        let mean = params::mean(&raw)?;
        let centered: Vec<ParamVector> = raw.iter().map(|c| c.sub(&mean)).collect();
        let spread = centered.iter().map(ParamVector::norm_sq).sum::<f64>() / workers as f64;
        let factor = if spread > 0.0 {
            (zeta_sq / spread).sqrt()
        } else {
            0.0
        };
        let centers = centered.iter().map(|c| c.scale(factor)).collect();
        Self::new(centers, noise)
    }

    /// Starts training from `x0` instead of the origin.
    pub fn with_initial_point(mut self, x0: ParamVector) -> Result<Self> {
        x0.check_dim(self.dim)?;
        self.start = Some(x0);
        Ok(self)
    }

    /// Starts training at a random point at `distance` from the optimum.
    pub fn with_random_start(self, distance: f64, rng: &mut dyn RngCore) -> Result<Self> {
        if !(distance >= 0.0) {
            return Err(Error::InvalidParameter(
                "start distance must be >= 0".into(),
            ));
        }
        let dir = ParamVector::from_untrusted(
            (0..self.dim).map(|_| StandardNormal.sample(rng)).collect(),
        );
        let norm = dir.norm();
        let opt = params::mean(&self.centers)?;
        let x0 = if norm > 0.0 {
            opt.add(&dir.scale(distance / norm))
        } else {
            opt
        };
        self.with_initial_point(x0)
    }

    pub fn centers(&self) -> &[ParamVector] {
        &self.centers
    }

    pub fn curvature(&self) -> f64 {
        self.curvature
    }
}

impl Task for QuadraticTask {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_workers(&self) -> usize {
        self.centers.len()
    }

    fn loss(&self, x: &ParamVector) -> f64 {
        let total: f64 = self.centers.iter().map(|b| x.dist_sq(b)).sum();
        0.5 * self.curvature * total / self.centers.len() as f64
    }

    fn worker_full_gradient(&self, worker: usize, x: &ParamVector) -> ParamVector {
        x.sub(&self.centers[worker]).scale(self.curvature)
    }

    fn worker_stoch_gradient(
        &self,
        worker: usize,
        x: &ParamVector,
        rng: &mut dyn RngCore,
    ) -> ParamVector {
        let mut g = self.worker_full_gradient(worker, x);
        if self.noise > 0.0 {
            let sd = self.noise / (self.dim as f64).sqrt();
            for v in g.as_mut_slice() {
                let e: f64 = StandardNormal.sample(rng);
                *v += sd * e;
            }
        }
        g
    }

    fn initial_point(&self) -> ParamVector {
        self.start
            .clone()
            .unwrap_or_else(|| ParamVector::zeros(self.dim))
    }

    fn optimum(&self) -> Option<ParamVector> {
        params::mean(&self.centers).ok()
    }

    fn known_zeta_sq(&self) -> Option<f64> {
        let mean = params::mean(&self.centers).ok()?;
        let total: f64 = self.centers.iter().map(|b| b.dist_sq(&mean)).sum();
        Some(self.curvature * self.curvature * total / self.centers.len() as f64)
    }

    fn noise_variance(&self) -> Option<f64> {
        Some(self.noise * self.noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn optimum_and_zeta() {
        let t = QuadraticTask::new(vec![pv(&[0.0, 0.0]), pv(&[2.0, 0.0]), pv(&[1.0, 3.0])], 0.0)
            .unwrap();
        assert_eq!(t.optimum().unwrap(), pv(&[1.0, 1.0]));
        // ‖b − b̄‖²: 2, 2, 4
        assert!((t.known_zeta_sq().unwrap() - 8.0 / 3.0).abs() < 1e-12);
        let g = t.full_gradient(&pv(&[1.0, 1.0]));
        assert!(g.norm() < 1e-15);
    }

    #[test]
    fn random_task_hits_target_heterogeneity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = QuadraticTask::random(20, 5, 1.0, 0.0, &mut rng).unwrap();
        assert!((t.known_zeta_sq().unwrap() - 1.0).abs() < 1e-12);
        assert!(t.optimum().unwrap().norm() < 1e-12);
    }

    #[test]
    fn stochastic_gradient_is_unbiased_with_stated_variance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let t = QuadraticTask::new(vec![pv(&[1.0, -1.0, 0.5])], 0.7).unwrap();
        let x = pv(&[0.2, 0.3, -0.4]);
        let full = t.worker_full_gradient(0, &x);
        let draws = 20_000;
        let mut sum = ParamVector::zeros(3);
        let mut sq_dev = 0.0;
        let mut per_coord_sq = [0.0; 3];
        for _ in 0..draws {
            let g = t.worker_stoch_gradient(0, &x, &mut rng);
            let dev = g.sub(&full);
            sq_dev += dev.norm_sq();
            for (k, v) in dev.as_slice().iter().enumerate() {
                per_coord_sq[k] += v * v;
            }
            sum.axpy(1.0, &g);
        }
        let m = sum.scale(1.0 / draws as f64);
        for (k, sq) in per_coord_sq.iter().enumerate() {
            let se = (sq / draws as f64 / draws as f64).sqrt();
            assert!((m.as_slice()[k] - full.as_slice()[k]).abs() <= 3.0 * se);
        }
        let var = sq_dev / draws as f64;
        assert!((var - 0.49).abs() < 0.02, "{var}");
    }

    #[test]
    fn random_start_sits_at_the_requested_distance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = QuadraticTask::random(5, 3, 1.0, 0.0, &mut rng)
            .unwrap()
            .with_random_start(2.0, &mut rng)
            .unwrap();
        let d = t.initial_point().dist_sq(&t.optimum().unwrap()).sqrt();
        assert!((d - 2.0).abs() < 1e-12);
        assert!(t.clone().with_initial_point(pv(&[1.0])).is_err());
    }
}
