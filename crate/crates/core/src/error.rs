use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by the modelling pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("curve {id}: only {usable} usable observations (need at least {required})")]
    TooFewPoints {
        id: String,
        usable: usize,
        required: usize,
    },

    #[error("curve {id}: local design is singular at u = {at} (bandwidth too small)")]
    SingularFit { id: String, at: f64 },

    #[error("warping increment {index} is not positive ({value:e})")]
    ZeroIncrement { index: usize, value: f64 },

    #[error("warping function is not strictly increasing at index {0}")]
    NonMonotone(usize),

    #[error("registration pool is empty")]
    EmptyPool,

    #[error("curve {0} has non-positive values; area-under-curve registration needs a positive curve")]
    NonPositiveCurve(String),

    #[error("optimizer produced a non-finite cost")]
    OptimizerDiverged,

    #[error("need at least two samples, got {0}")]
    DegenerateSample(usize),

    #[error("grid mismatch: expected {expected} points, got {found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("design matrix is rank deficient; aliased columns: {0:?}")]
    RankDeficientDesign(Vec<String>),

    #[error("covariate {covariate} missing for observation {id}")]
    MissingLevel { covariate: String, id: String },

    #[error("covariance matrix is not positive definite after clamping")]
    NotPositiveDefinite,

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("dense oracle refused problem of size {0} (limit 5000)")]
    TooLarge(usize),

    #[error("invalid synthetic specification: {0}")]
    InvalidSpec(String),

    #[error("unknown formula term or variable: {0}")]
    Formula(String),
}

pub type Result<T> = core::result::Result<T, Error>;
