use thiserror::Error;

/// Errors raised by the inference toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Every weight is zero: the particle system has collapsed.
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("matrix is not positive definite even after ridge regularization")]
    NotPositiveDefinite,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("paired differences have zero variance")]
    ZeroVariance,

    #[error("particle {particle} exhausted {attempts} attempts at tolerance {epsilon}")]
    AttemptsExhausted {
        particle: usize,
        attempts: u64,
        epsilon: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
