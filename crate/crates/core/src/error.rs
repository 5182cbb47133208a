use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, lengths or values that an operator cannot accept.
    #[error("rejected input: {0}")]
    InvalidInput(String),

    /// NaN/Inf produced or a non-positive variance.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The caller asked for something that makes no sense (empty threshold
    /// list, unknown dataset, missing saved context, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A graph or dataset configuration that violates a structural rule.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Weight or fixture file that cannot be loaded.
    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for this error: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::UnsupportedFormat(_) => 1,
            Error::InvalidInput(_) | Error::Load { .. } | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::InvalidInput(format!("csv: {other:?}")),
        }
    }
}
