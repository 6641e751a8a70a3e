use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition (shape, range, finiteness).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical operation failed (factorization, non-finite intermediate).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Moment matching produced a non-positive tilted variance; carries the
    /// moments so the caller can fall back to a clamped site.
    #[error("non-positive tilted variance {var:.3e} (mean {mean:.3e}, e_z {e_z:.3e})")]
    NonPositiveTiltedVariance {
        mean: f64,
        var: f64,
        e_z: f64,
        log_z0: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
