use thiserror::Error;

/// Errors raised by the simulation and estimation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular drift on path {path} at node {node}")]
    SingularDrift { path: usize, node: usize },

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("divergent exponential weight: {0}")]
    DivergentWeight(String),

    #[error("grid resolution too coarse: {n_steps} steps, need at least {required}")]
    Resolution { n_steps: usize, required: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
