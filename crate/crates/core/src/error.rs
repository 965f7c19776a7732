use thiserror::Error;

/// Errors produced by the estimators, diagnostics and I/O helpers.
#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates one or more invariants.
    #[error("invalid observation matrix: {}", join_issues(.0))]
    Validation(Vec<String>),

    /// A caller-supplied argument is out of its legal range.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Two inputs have incompatible shapes.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A matrix that must be positive definite is not.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A matrix that must be invertible is (numerically) singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A diagonal entry that must be a positive variance is not.
    #[error("degenerate variance at index {index}: {value}")]
    DegenerateVariance { index: usize, value: f64 },

    /// Input carries no usable signal (for example an all-zero panel).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// The dense eigensolver or SVD did not converge.
    #[error("decomposition failed to converge: {0}")]
    Decomposition(String),

    /// Malformed delimited text.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that stem from the numbers rather than from the input format.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::Singular(_)
                | Error::DegenerateVariance { .. }
                | Error::Decomposition(_)
        )
    }

    pub(crate) fn shape(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

fn join_issues(issues: &[String]) -> String {
    issues.join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
