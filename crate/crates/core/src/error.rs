use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layout `{name}`: {reason}")]
    InvalidLayout { name: String, reason: String },

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("unknown action `{0}`")]
    UnknownAction(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("schema fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("value {value} out of range at ({row}, {col})")]
    OutOfRange { row: usize, col: usize, value: f64 },

    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("episode {episode} aborted: {reason}")]
    EpisodeFailed { episode: usize, reason: String },

    #[error("no recorded proposals for timestep {0}")]
    MissingTimestep(usize),

    #[error("transport: {0}")]
    Transport(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
