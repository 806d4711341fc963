use thiserror::Error;

/// Errors raised by the distillation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or out-of-range input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// No transportable mass left on one side of a problem.
    #[error("empty distribution: {0}")]
    EmptyDistribution(String),

    /// Instance exceeds the size cap of a dense test oracle.
    #[error("unsupported size {rows}x{cols} (cap {cap})")]
    UnsupportedSize { rows: usize, cols: usize, cap: usize },

    /// A prediction file does not match its schema.
    #[error("schema error at {location}: {message}")]
    Schema { location: String, message: String },

    /// A file could not be read or written.
    #[error("cannot access {path}: {message}")]
    Io { path: String, message: String },

    /// A computation produced NaN or infinity.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
