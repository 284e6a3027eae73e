use thiserror::Error;

/// Errors raised by the numerical layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("non-finite coefficient at multi-index {index:?}")]
    NonFiniteCoefficient { index: Vec<u32> },

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("regularity tag mismatch: expected {expected}, found {found}")]
    TagMismatch { expected: f64, found: f64 },

    #[error("insufficient regularity: {0}")]
    InsufficientRegularity(String),

    #[error("eigen/root solve failed: {0}")]
    SolverFailure(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("numerical blow-up at step {step} (t = {time})")]
    NumericalBlowup { step: usize, time: f64 },

    #[error("norm guard tripped at step {step}: norm {norm:.3e} exceeds {limit:.3e}")]
    NormGuard { step: usize, norm: f64, limit: f64 },

    #[error("Picard iteration diverged: deviations {deviations:?}")]
    PicardDivergence { deviations: Vec<f64> },

    #[error("rejection sampler exceeded {0} attempts")]
    RejectionCap(usize),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("too few valid paths: {valid} < {required}")]
    TooFewPaths { valid: usize, required: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for bad input or configuration, 3 for numerical
    /// guards and solver failures, 1 for verdict-level failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::BasisMismatch(_)
            | Error::TagMismatch { .. }
            | Error::InsufficientRegularity(_)
            | Error::GridMismatch(_)
            | Error::Io(_) => 2,
            Error::TooFewPaths { .. } => 1,
            Error::NonFinite(_)
            | Error::NonFiniteCoefficient { .. }
            | Error::SolverFailure(_)
            | Error::DegenerateFit(_)
            | Error::NumericalBlowup { .. }
            | Error::NormGuard { .. }
            | Error::PicardDivergence { .. }
            | Error::RejectionCap(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
