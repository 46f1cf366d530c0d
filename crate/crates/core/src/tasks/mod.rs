//! Optimization problems the trainer runs on.

mod dataset;
mod idx;
mod least_squares;
mod logistic;
mod lower_bound;
mod quadratic;

pub use dataset::{
    imbalance_ratio, long_tail_subsample, partition_heterogeneous, synthetic_classification,
    Dataset, SyntheticSpec,
};
pub use idx::{
    dataset_from_idx, encode_idx_images, encode_idx_labels, ingest_idx, parse_idx_images,
    parse_idx_labels, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels,
    IdxImages,
};
pub use least_squares::{make_consistent_least_squares, LeastSquaresTask, WorkerSystem};
pub use logistic::{make_logistic_task, LogisticTask};
pub use lower_bound::{make_lower_bound_pair, LowerBoundPair};
pub use quadratic::QuadraticTask;

use rand::RngCore;

use crate::params::ParamVector;

/// Distributed objective `f = mean_j f_j` over the good workers.
///
/// Worker indices run over the good workers only; Byzantine workers hold no
/// shard of their own.
pub trait Task: Send + Sync {
    fn dim(&self) -> usize;

    fn num_workers(&self) -> usize;

    fn loss(&self, x: &ParamVector) -> f64;

    fn worker_full_gradient(&self, worker: usize, x: &ParamVector) -> ParamVector;

    /// Unbiased estimate of [`Task::worker_full_gradient`].
    fn worker_stoch_gradient(
        &self,
        worker: usize,
        x: &ParamVector,
        rng: &mut dyn RngCore,
    ) -> ParamVector;

    fn full_gradient(&self, x: &ParamVector) -> ParamVector {
        let mut acc = ParamVector::zeros(self.dim());
        for j in 0..self.num_workers() {
            acc.axpy(1.0, &self.worker_full_gradient(j, x));
        }
        acc.scale(1.0 / self.num_workers() as f64)
    }

    fn initial_point(&self) -> ParamVector {
        ParamVector::zeros(self.dim())
    }

    fn optimum(&self) -> Option<ParamVector> {
        None
    }

    fn known_zeta_sq(&self) -> Option<f64> {
        None
    }

    /// Variance of the stochastic gradients around the full worker gradient,
    /// when the task knows it.
    fn noise_variance(&self) -> Option<f64> {
        None
    }

    fn accuracy(&self, _x: &ParamVector) -> Option<f64> {
        None
    }

    /// Stochastic gradient a label-flipping Byzantine worker computes on the
    /// whole training set with flipped labels. `None` if the task has no labels.
    fn flipped_label_gradient(
        &self,
        _x: &ParamVector,
        _rng: &mut dyn RngCore,
    ) -> Option<ParamVector> {
        None
    }
}
