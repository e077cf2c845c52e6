use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("hyperparameter `{name}` must be finite and strictly positive, got {value}")]
    InvalidHyperparameter { name: String, value: f64 },

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel is not separable along input dimensions")]
    NotSeparable,

    #[error("axis is not equispaced at index {index} (spacing {found}, expected {expected})")]
    NotEquispaced {
        index: usize,
        expected: f64,
        found: f64,
    },

    #[error("axis is not strictly increasing at index {index}")]
    NotIncreasing { index: usize },

    #[error("point {value} (dimension {dim}) lies outside the warp domain [{lo}, {hi}]")]
    OutOfDomain { dim: usize, value: f64, lo: f64, hi: f64 },

    #[error("value {value} (dimension {dim}) lies outside the warp image [{lo}, {hi}]")]
    OutsideImage { dim: usize, value: f64, lo: f64, hi: f64 },

    #[error("warp is not strictly increasing near x = {at}")]
    NotMonotone { at: f64 },

    #[error("invalid warp: {0}")]
    InvalidWarp(String),

    #[error("invalid event list: {0}")]
    InvalidEvents(String),

    #[error("grid axis {dim} has {count} points, at least {required} are required")]
    GridTooSmall {
        dim: usize,
        count: usize,
        required: usize,
    },

    #[error("grid axis {dim} leaves {found:.3} cells of margin around the data box, {required} required")]
    InsufficientMargin { dim: usize, found: f64, required: usize },

    #[error("point {point} (dimension {dim}, value {value}) lies outside the stencil-safe region [{lo}, {hi}]")]
    OutsideSafeRegion {
        point: usize,
        dim: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("matrix is not positive semidefinite (eigenvalue {min_eigenvalue:e}, largest {max_eigenvalue:e})")]
    NotPositiveSemidefinite {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("Lanczos produced a nonpositive Ritz value {value:e}; the operator is not positive definite (add jitter to the noise variance)")]
    NonPositiveRitz { value: f64 },

    #[error("Cholesky factorization failed; the kernel matrix is not positive definite (add jitter)")]
    Factorization,

    #[error("hyperparameter index {index} out of range ({count} parameters)")]
    ParameterIndex { index: usize, count: usize },

    #[error("{0}")]
    InvalidArgument(String),
}
