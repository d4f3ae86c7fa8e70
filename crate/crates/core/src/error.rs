//! Error taxonomy shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A file could not be parsed; carries the offending line when known.
    #[error("parse error in {path}{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        line: Option<u64>,
        message: String,
    },

    /// Input data violates an invariant (duplicates, gaps, negative kWh, ...).
    #[error("data error: {0}")]
    Data(String),

    /// The caller misused an API or the CLI (bad arguments, empty batch, ...).
    #[error("usage error: {0}")]
    Usage(String),

    /// A numeric computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A weight or report file is malformed or incompatible.
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI maps this error to: usage errors exit 2,
    /// everything else exits 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            _ => 1,
        }
    }
}
