use thiserror::Error;

/// Errors reported by the flowdepth library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point with z = {z} cannot be projected (z must be > 0)")]
    NonProjectable { z: f64 },

    #[error("invalid depth {depth} (must be finite and > 0)")]
    InvalidDepth { depth: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("pixel ({x}, {y}) has no in-bounds matching candidate")]
    IsolatedPixel { x: usize, y: usize },

    #[error("shape mismatch for {what}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("fitting diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("no valid pixels for {0}")]
    EmptyMask(&'static str),

    #[error("loss term `{0}` is not finite")]
    InvalidTerm(&'static str),

    #[error("prediction and ground truth share no valid pixel")]
    EmptyOverlap,

    #[error("raster {width}x{height} is smaller than the required {min}x{min}")]
    TooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("validation failed for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
