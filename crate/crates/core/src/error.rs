use thiserror::Error;

/// Errors surfaced by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("accessible region selector matches no collar node")]
    EmptyAccessible,

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel is not symmetric on node pair ({i}, {j}): {forward:e} vs {backward:e}")]
    KernelAsymmetric {
        i: usize,
        j: usize,
        forward: f64,
        backward: f64,
    },

    #[error("two-point fields inconsistent on pair ({i}, {j}): {reason}")]
    InconsistentFields { i: usize, j: usize, reason: String },

    #[error("operator entry not finite at row {row}; enable symmetric pairing or coarsen the singular kernel")]
    Overflow { row: usize },

    #[error("invalid fractional specification: {0}")]
    InvalidFractional(String),

    #[error("reaction coefficient must be finite and nonnegative, got {value:e} at node {node}")]
    NegativeCoefficient { node: usize, value: f64 },

    #[error("invalid source: {0}")]
    InvalidSource(String),

    #[error("invalid sensor: {0}")]
    InvalidSensor(String),

    #[error("{what}: expected length {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("time index {index} out of range for {len} time levels")]
    TimeIndexOutOfRange { index: usize, len: usize },

    #[error("system matrix is singular (internal error)")]
    SingularSystem,

    #[error("Gram matrix ill-conditioned (condition estimate {condition:e}); enable the ridge term")]
    IllConditionedGram { condition: f64 },

    #[error("sensor does not illuminate domain: every interior node is masked")]
    SensorDoesNotIlluminate,

    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
