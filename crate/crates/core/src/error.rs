//! Error type shared by every module of the toolkit.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad magic bytes, unsupported version or a malformed layout.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// A recorded checksum or count does not match what was read.
    #[error("integrity error in {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },

    /// Payload values that violate a data invariant (NaN, Inf, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A value that would produce an invalid file or dataset.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("language `{0}` has no tokens in the dataset")]
    EmptyLanguage(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("layer mismatch: expected layer {expected}, got layer {actual}")]
    LayerMismatch { expected: u32, actual: u32 },

    #[error("no language mean available for `{0}`")]
    MissingMean(String),

    #[error("sentence {0} has no tokens")]
    EmptySentence(usize),

    #[error("degenerate (zero-norm) vector: {0}")]
    DegenerateVector(String),

    #[error("gold mismatch: {0}")]
    GoldMismatch(String),

    #[error("bad configuration: {0}")]
    Config(String),

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn integrity(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Integrity {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by how the tool was invoked rather than by the data.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
