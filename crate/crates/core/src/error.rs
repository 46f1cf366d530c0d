use thiserror::Error;

use crate::optimizer::RunMetrics;
use crate::params::ParamVector;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("krum needs n - q - 2 >= 1, got n={n}, q={q}")]
    KrumTooFewInputs { n: usize, q: usize },

    #[error("trim count b={b} too large for n={n}")]
    TrimTooLarge { n: usize, b: usize },

    #[error("bucket size s={s} out of range for n={n}")]
    InvalidBucketSize { n: usize, s: usize },

    #[error("fewer than two good indices")]
    TooFewGood,

    #[error("label out of range: {0}")]
    LabelOutOfRange(u32),

    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("class emptied: class {0} keeps no samples")]
    ClassEmptied(usize),

    #[error("infeasible dimensions: {0}")]
    InfeasibleDimensions(String),

    #[error("cohort inconsistent with attack: {0}")]
    InconsistentCohort(String),

    #[error("task does not support {0}")]
    Unsupported(&'static str),

    #[error("not converged after {iters} iterations")]
    NotConverged { iters: usize, best: ParamVector },

    #[error("divergence at step {step}")]
    Divergence {
        step: usize,
        partial: Box<RunMetrics>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
