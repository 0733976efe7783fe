use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in {path:?} at byte offset {offset} (line {line}): {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        offset: usize,
        message: String,
    },

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Template or image window is constant, so the correlation is undefined.
    #[error("zero variance: no texture to match")]
    ZeroVariance,

    #[error("no valid placement: every candidate window has zero variance")]
    NoValidPlacement,

    #[error("empty similarity: every template was degenerate")]
    EmptySimilarity,

    #[error("scene infeasible: {0}")]
    SceneInfeasible(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
