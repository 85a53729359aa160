//! Error type shared across the crate.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Invalid configuration or parameters (exit code 2).
    Config,
    /// Malformed or missing data artifacts (exit code 3).
    Data,
    /// Numeric failure during training or inference (exit code 4).
    Numeric,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate task id `{0}`")]
    DuplicateId(String),

    #[error("record `{id}`: trace does not tokenize at `{piece}`")]
    Untokenizable { id: String, piece: String },

    #[error("checkpoint does not match the active vocabulary/featurizer (expected {expected:#018x}, found {found:#018x})")]
    HashMismatch { expected: u64, found: u64 },

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("iteration {iteration} outside schedule of length {len}")]
    ScheduleRange { iteration: usize, len: usize },

    #[error("pass@k: k={k} exceeds a correctness vector of length {len}")]
    PassAtK { k: usize, len: usize },

    #[error("curated dataset is empty: weaken the curation filters or use a stronger generator")]
    EmptyCurated,

    #[error("enumeration of {combos:.3e} trajectories exceeds the 1e6 guard")]
    EnumerationTooLarge { combos: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Wrap an I/O error with the path it concerns.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Which exit-code class this error belongs to.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::ScheduleRange { .. } | Error::PassAtK { .. } => {
                ErrorClass::Config
            }
            Error::NonFinite { .. } | Error::EnumerationTooLarge { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
