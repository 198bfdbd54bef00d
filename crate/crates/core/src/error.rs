use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("resource budget exceeded: {0}")]
    Resource(String),

    #[error("kernel is not in the weak decay regime: {0}")]
    NotWeakDecay(String),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}
