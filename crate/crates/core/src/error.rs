use std::io;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("numerical failure at x = {x}, u = {u}: {reason}")]
    Numerical { x: f64, u: f64, reason: String },

    #[error("no convergence after {} iterations (last residual {:e})", .trace.len(), .trace.last().copied().unwrap_or(f64::NAN))]
    Convergence { trace: Vec<f64> },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient window: {0}")]
    InsufficientWindow(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
