use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid dimensions {height}x{width}: both must be powers of two and at least 8")]
    InvalidDimensions { height: usize, width: usize },

    #[error("grid has {expected} cells but {actual} values were supplied")]
    DataLength { expected: usize, actual: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("scatterer {index} leaves the frame after rotation by {azimuth_deg} degrees")]
    OutOfFrame { index: usize, azimuth_deg: f64 },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (ce={ce}, d={discrimination}, total={total})"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        ce: f64,
        discrimination: f64,
        total: f64,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field,
        reason: reason.into(),
    }
}
