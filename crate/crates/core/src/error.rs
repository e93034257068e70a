use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or image extents do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A label value is outside 0..NUM_CLASSES.
    #[error("class id {found} out of range (expected < {limit})")]
    ClassRange { found: usize, limit: usize },

    /// A class has no usable pixels (or pixel pairs) in the queried region.
    #[error("class {class} absent: {reason}")]
    ClassAbsent { class: usize, reason: String },

    /// Correlation of a constant vector is undefined.
    #[error("zero variance in {0} input of correlation")]
    ZeroVariance(&'static str),

    /// Non-finite values where finite math is required.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// Bad configuration (CLI flags, config file, architecture constraints).
    #[error("config error: {0}")]
    Config(String),

    /// Dataset layout problems: missing files, bad ranges, empty sets.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Malformed file contents (PNG, checkpoint container, config syntax).
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    /// Training diverged; carries the iteration and component losses.
    #[error("non-finite loss at iteration {iteration}: {details}")]
    Diverged { iteration: u64, details: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Violated internal invariant. Reaching this is a bug.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), reason: reason.into() }
    }
}
