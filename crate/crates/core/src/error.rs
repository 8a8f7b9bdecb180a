use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected_nx}x{expected_ny}, got {nx}x{ny}")]
    Dimensions { expected_nx: usize, expected_ny: usize, nx: usize, ny: usize },

    #[error("ensemble mean is zero at pixel (x={x}, y={y})")]
    ZeroBackground { x: usize, y: usize },

    #[error("image {nx}x{ny} is smaller than the {tile}px tile")]
    ImageTooSmall { nx: usize, ny: usize, tile: usize },

    #[error("tile index {index} out of range for a grid of {len} tiles")]
    TileIndex { index: usize, len: usize },

    #[error("no prediction supplied for tile index {0}")]
    MissingTile(usize),

    #[error("no external mask for hologram {hid}, plane {plane}, tile {tile}")]
    MissingMask { hid: u32, plane: usize, tile: usize },

    #[error("only {found} particle-free tiles found, {needed} requested")]
    InsufficientNegatives { needed: usize, found: usize },

    #[error("standardize requires a non-constant image")]
    ConstantImage,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("hologram id mismatch: {0}")]
    IdMismatch(String),

    #[error("{}: {reason}", path.display())]
    Malformed { path: PathBuf, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed { path: path.into(), reason: reason.into() }
    }
}
