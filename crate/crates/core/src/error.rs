use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    /// Bad magic, unsupported version or element code, unparsable text.
    #[error("format error: {0}")]
    Format(String),

    /// Header and payload disagree (truncated file, trailing bytes, dims mismatch).
    #[error("corrupt grid: {0}")]
    Corruption(String),

    /// A value lies outside the domain of the operation (label >= K, NaN logit, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A ground truth cannot produce the requested map or configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A training step produced a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch(format!("expected {expected:?}, got {got:?}"))
    }
}
