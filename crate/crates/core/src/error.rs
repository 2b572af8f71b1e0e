use std::io;

use thiserror::Error;

/// Errors produced by the density-map toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-length label")]
    ZeroLengthLabel,

    #[error("invalid kernel config: {0}")]
    InvalidConfig(String),

    #[error("no records")]
    NoRecords,

    #[error("dimension mismatch: {left_width}x{left_height} vs {right_width}x{right_height}")]
    DimensionMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
    },

    #[error("negative count {0}")]
    NegativeCount(f64),

    #[error("unmatched image ids: {}", .0.join(", "))]
    UnmatchedIds(Vec<String>),

    #[error("feature layer {layer} shape mismatch: {left:?} vs {right:?}")]
    LayerShapeMismatch {
        layer: usize,
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    #[error("invalid feature stack: {0}")]
    InvalidFeatureStack(String),

    #[error("image too small for feature pyramid: {width}x{height} (minimum 32x32)")]
    ImageTooSmall { width: u32, height: u32 },

    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),

    #[error("invalid threshold {0}: must be positive")]
    InvalidThreshold(f64),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
