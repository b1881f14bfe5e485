use thiserror::Error;

/// Failure modes of a cohort functional evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CohortError {
    #[error("cohort too small: {size} points, at least {min} required")]
    TooSmall { size: usize, min: usize },
    #[error("functional undefined on cohort: {0}")]
    Undefined(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at point {row}, feature {col}")]
    NonFinite { row: usize, col: usize },

    #[error("point {0} has zero norm")]
    ZeroNorm(usize),

    #[error("isolated points with zero affinity row sum: {0:?}")]
    IsolatedPoints(Vec<usize>),

    #[error(
        "eigensolver did not converge: {converged}/{requested} pairs after {iterations} \
         Lanczos steps (max residual {max_residual:.3e})"
    )]
    EigenNonConvergence {
        iterations: usize,
        converged: usize,
        requested: usize,
        max_residual: f64,
    },

    #[error("cox regression failed: {0}")]
    CoxFit(String),

    #[error("point has no affinity to the reference set (largest relative affinity {max_affinity:.3e})")]
    OutOfSupport { max_affinity: f64 },

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Cohort(#[from] CohortError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input (configuration or data
    /// validation) rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidInput(_)
                | Error::NonFinite { .. }
                | Error::Parse(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
