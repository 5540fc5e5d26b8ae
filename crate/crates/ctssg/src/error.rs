//! Crate-wide error type.

use thiserror::Error;

/// Unified error type for all fallible operations in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix extents do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An input value violates an operation's contract.
    #[error("invalid argument: {0}")]
    Validation(String),

    /// An axis or element index is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A numerical procedure failed (non-finite values, non-convergence,
    /// degenerate spectrum).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Checkpoint/config mismatch on load.
    #[error("checkpoint load failed: {0}")]
    Load(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
    pub fn index(msg: impl Into<String>) -> Self {
        Error::Index(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn load(msg: impl Into<String>) -> Self {
        Error::Load(msg.into())
    }
}
