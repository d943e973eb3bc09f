use thiserror::Error;

use crate::codecs::ScalarCodebook;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range for radix {radix} at position {position}")]
    IndexOutOfRange {
        position: usize,
        index: u64,
        radix: u64,
    },

    #[error("covariance matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("covariance matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("unknown source family `{0}`")]
    UnknownFamily(String),

    #[error("Lloyd iteration did not converge after {iterations} iterations (last movement {movement:e})")]
    NotConverged {
        iterations: usize,
        movement: f64,
        last: Box<ScalarCodebook>,
    },

    #[error("index needs {bits} bits, at most 62 are supported")]
    IndexOverflow { bits: f64 },

    #[error("matrix K + diag(q) is singular")]
    Singular,

    #[error("symmetric-difference budget {delta} not met; per-cell upper estimates {measured:?}")]
    BudgetNotMet { delta: f64, measured: Vec<f64> },

    #[error("delta too large: M*sqrt(delta) = {bound} exceeds n*epsilon' = {allowed}")]
    DeltaTooLarge { bound: f64, allowed: f64 },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
