use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero displacement between consecutive locations ({x}, {y}): bearing undefined")]
    ZeroDisplacement { x: f64, y: f64 },

    #[error("covariance is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("partition lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("animal {animal}: {msg}")]
    Grid { animal: String, msg: String },

    #[error("pooled variance of the locations is zero; cannot standardize")]
    ZeroVariance,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite log-likelihood at animal {animal}, time {time}: {detail}")]
    NonFinite { animal: usize, time: usize, detail: String },

    #[error("need at least {needed} {what}, got {got}")]
    TooFew { what: &'static str, needed: usize, got: usize },

    #[error("empty beam candidate set at time {0}")]
    EmptyCandidates(usize),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
