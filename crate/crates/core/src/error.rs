use thiserror::Error;

/// Error type shared by every module.
#[derive(Debug, Error)]
pub enum ErmError {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("matrix is not positive definite (pivot {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("row {row} has squared norm {norm_sq:e} above kappa {kappa:e}")]
    RowNormBound { row: usize, norm_sq: f64, kappa: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point is not interior to block {block}: {detail}")]
    NotInterior { block: usize, detail: String },
    #[error("validation failed at {location}: {message}")]
    Validation { location: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl ErmError {
    pub fn dims(op: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        ErmError::DimensionMismatch {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        ErmError::Validation {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the CLI: 3 for input/validation problems, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ErmError::NotPositiveDefinite { .. }
            | ErmError::Numerical(_)
            | ErmError::Invariant(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, ErmError>;
