//! Simulator for Byzantine-robust distributed optimization on heterogeneous data.
//!
//! Robust aggregators, the bucketing wrapper, omniscient attacks and a
//! worker-momentum training loop, plus the tasks and harness that drive them.

// `!(x >= 0.0)` is the NaN-rejecting form used throughout for parameter checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregators;
pub mod attacks;
pub mod bucketing;
pub mod certify;
pub mod error;
pub mod harness;
pub mod optimizer;
pub mod oracle;
pub mod params;
pub mod rng;
pub mod tasks;

pub use error::{Error, Result};
pub use params::{CohortSpec, ParamVector, WorkerId, WorkerMessage};
