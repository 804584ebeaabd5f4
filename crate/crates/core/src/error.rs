use thiserror::Error;

/// Errors surfaced by the estimators, the simulator and the file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("column {column} is constant and cannot be standardized")]
    DegenerateColumn { column: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("population contains {available} {label}, study needs {required}")]
    Shortfall {
        label: &'static str,
        available: usize,
        required: usize,
    },

    #[error("degenerate regressor: {0}")]
    DegenerateRegressor(String),

    #[error("objective is not finite at any probe point")]
    NonFiniteObjective,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
