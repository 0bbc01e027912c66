use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unsupported image format in {}: {reason}", .path.display())]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("unsupported bit depth {depth} in {} (only 8-bit samples are accepted)", .path.display())]
    UnsupportedBitDepth { path: PathBuf, depth: u32 },

    #[error("truncated image payload in {}: {reason}", .path.display())]
    Truncated { path: PathBuf, reason: String },

    #[error("cannot write {}: {source}", .path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("rectangle top={top} left={left} {height}x{width} exceeds frame {frame_height}x{frame_width}")]
    OutOfBounds {
        top: usize,
        left: usize,
        height: usize,
        width: usize,
        frame_height: usize,
        frame_width: usize,
    },

    #[error("overlay lies entirely outside the {height}x{width} frame")]
    OverlayOutsideFrame { height: usize, width: usize },

    #[error("expected {expected} frames, got {actual}")]
    FrameCount { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::DimensionMismatch { expected, actual }
    }
}
