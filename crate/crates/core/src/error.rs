use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the model, the estimators and the command-line layer.
#[derive(Debug, Error)]
pub enum AsppError {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("degenerate market: active stock positions vanished (sum s/(1+k) = {denominator:e})")]
    DegenerateMarket { denominator: f64 },

    #[error("empty series")]
    EmptySeries,

    #[error("insufficient data: {got} observations, need at least {need}")]
    InsufficientData { got: usize, need: usize },

    #[error("degenerate regressor: x has no variance")]
    DegenerateRegressor,

    #[error("saturated hazard: proportion {p} is at or above 1")]
    SaturatedHazard { p: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl AsppError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        AsppError::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AsppError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, AsppError>;
