use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed edit span: {0}")]
    MalformedEdit(String),

    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("corpus contains no tokens")]
    EmptyCorpus,

    #[error("invalid data: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({what})")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("batch of {0} is too small for batch statistics (need at least 2)")]
    DegenerateBatch(usize),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty input")]
    EmptyInput,

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("gradient check failed on tensor(s): {0}")]
    GradcheckFailed(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),

    #[error("no labeled non-tie pairs to score")]
    NoLabeledPairs,

    #[error("id mismatch between prediction and gold files, first offending id: {0}")]
    IdMismatch(String),

    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::NonFiniteLoss { .. } | Error::ShapeMismatch { .. } | Error::GradcheckFailed(_) => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
