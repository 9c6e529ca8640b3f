use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: usize, found: usize },

    #[error("step {t} is outside the horizon of {horizon} steps")]
    OutOfHorizon { t: usize, horizon: usize },

    #[error("infeasible point: {0}")]
    Infeasible(String),

    #[error("fixed-point iteration did not reach tolerance {tol:e} within {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64, tol: f64 },

    #[error("gram matrix factorization failed: {0}")]
    Factorization(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
