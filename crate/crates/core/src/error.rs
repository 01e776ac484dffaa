use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads version {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code, printed by the CLI ahead of the message.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "E_SHAPE",
            Error::InvalidArgument(_) => "E_ARGUMENT",
            Error::NonScalarLoss(_) => "E_NON_SCALAR_LOSS",
            Error::MissingGradient(_) => "E_MISSING_GRADIENT",
            Error::NonFinite(_) => "E_NON_FINITE",
            Error::BadMagic { .. } => "E_BAD_MAGIC",
            Error::VersionMismatch { .. } => "E_VERSION",
            Error::Truncated(_) => "E_TRUNCATED",
            Error::Corrupt(_) => "E_CORRUPT",
            Error::Config { .. } => "E_CONFIG",
            Error::EmptySplit(_) => "E_EMPTY_SPLIT",
            Error::Io { .. } => "E_IO",
        }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
