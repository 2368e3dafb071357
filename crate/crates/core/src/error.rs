use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its admissible domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Vector/matrix sizes do not match what an operation requires.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A numerical routine failed (eigensolver breakdown, singular system, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// File contents could not be parsed.
    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },

    /// An I/O operation failed; carries the offending path for context.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// An adaptive run hit its cost budget before reaching the target.
    #[error("cost budget exhausted: {0}")]
    BudgetExhausted(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
