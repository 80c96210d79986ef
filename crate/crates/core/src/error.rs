use std::path::PathBuf;

use crate::dp::AccountantState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report. The CLI maps each variant class to
/// its own exit code (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("training failed at step {step}: {reason}")]
    TrainingFailure {
        step: usize,
        reason: String,
        /// Parameters of the last finite checkpoint, when one exists.
        last_good: Option<Vec<f64>>,
        /// Privacy already spent before the failure. Spent budget stays spent.
        accountant: Option<Box<AccountantState>>,
    },

    #[error("privacy budget exhausted: {0}")]
    BudgetExhausted(String),

    #[error("inversion failed: {0}")]
    InversionFailure(String),

    #[error("batch failure: {failed} of {total} inversions failed")]
    BatchFailure { failed: usize, total: usize },

    #[error("degenerate training data: {0}")]
    DegenerateTraining(String),

    #[error("provenance error: {0}")]
    Provenance(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class. Zero is reserved for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::EmptyResult(_) => 3,
            Error::ContractViolation(_) => 4,
            Error::TrainingFailure { .. } => 5,
            Error::BudgetExhausted(_) => 6,
            Error::InversionFailure(_) | Error::BatchFailure { .. } => 7,
            Error::DegenerateTraining(_) => 8,
            Error::Provenance(_) => 9,
            Error::Format { .. } => 10,
            Error::Io { .. } => 11,
        }
    }
}
