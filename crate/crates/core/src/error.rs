//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Tensor operation received incompatible shapes.
    ShapeMismatch { op: &'static str, detail: String },
    /// An operation produced NaN or infinity.
    NonFinite { op: &'static str },
    /// Backward was called on a tape that was already consumed.
    TapeConsumed,
    /// Backward requires a scalar loss node.
    NonScalarLoss { rows: usize, cols: usize },
    /// Map generation could not satisfy the requested layout.
    MapGen(String),
    /// A map mutation violated its preconditions.
    Mutation(String),
    /// Invalid run configuration or CLI argument.
    Config(String),
    /// Metrics precondition violated (e.g. pose outside the visitable set).
    Metrics(String),
    /// Checkpoint file is malformed or has an unsupported version.
    Checkpoint(String),
    Io(std::io::Error),
    Json(serde_json::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            Error::NonFinite { op } => write!(f, "non-finite value produced by {op}"),
            Error::TapeConsumed => write!(f, "backward called twice on the same tape"),
            Error::NonScalarLoss { rows, cols } => {
                write!(f, "backward requires a scalar loss, got {rows}x{cols}")
            }
            Error::MapGen(msg) => write!(f, "map generation failed: {msg}"),
            Error::Mutation(msg) => write!(f, "map mutation rejected: {msg}"),
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Metrics(msg) => write!(f, "metrics error: {msg}"),
            Error::Checkpoint(msg) => write!(f, "checkpoint error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
