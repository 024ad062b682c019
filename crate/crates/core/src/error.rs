use thiserror::Error;

/// Errors produced by the comparator model and its analysis chain.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a physical or structural invariant.
    #[error("validation: {0}")]
    Validation(String),

    /// Configuration file could not be parsed or is incomplete.
    #[error("config: {0}")]
    Config(String),

    /// Input data (time series, fit points) is malformed.
    #[error("data: {0}")]
    Data(String),

    /// Iterative fit failed to converge within the iteration budget.
    #[error("fit did not converge after {iterations} iterations (residual {residual_norm:.3e})")]
    NonConvergence {
        iterations: usize,
        residual_norm: f64,
        last_parameters: Vec<f64>,
    },

    /// Closed-loop tracker left its linear capture range.
    #[error("tracker lost lock: {0}")]
    LockLoss(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Process exit code for CLI front ends: 2 config/validation,
    /// 3 data/io, 4 runtime (lock-loss, non-convergence).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) | Error::Serialization(_) => 3,
            Error::NonConvergence { .. } | Error::LockLoss(_) => 4,
        }
    }
}
