//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/map dimensions do not agree with what the operation requires.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A value violates the operation's domain (wrong count, out of range, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Point configuration too degenerate to determine a transform
    /// (collinear or coincident sources).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// A linear system could not be solved.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// A sample that must be finite is NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed serialized data (bad magic, truncated payload, ...).
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
