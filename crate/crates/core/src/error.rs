use thiserror::Error;

use crate::svi::Checkpoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "prior covariance is not positive definite (jitter {jitter:e}); increase the kernel jitter"
    )]
    NotPositiveDefinite { jitter: f64 },

    /// Optimization produced a non-finite gradient or parameter. Carries the
    /// last state whose parameters were all finite.
    #[error("optimization diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        last_finite: Box<Checkpoint>,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
