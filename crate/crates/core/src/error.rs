use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid speed distribution: {0}")]
    InvalidDistribution(String),

    /// The integrand returned NaN or infinity.
    #[error("non-finite integrand value {value} at s = {at}")]
    NonFiniteIntegrand { at: f64, value: f64 },

    #[error("grid step {step} covers the support with only {points} points (need at least {required})")]
    GridTooCoarse { step: f64, points: usize, required: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("density is not normalized: total mass {mass}")]
    Unnormalized { mass: f64 },

    #[error("no fit possible: {0}")]
    NoFit(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Fails unless `value` is finite and strictly positive.
pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and > 0, got {value}")))
    }
}
