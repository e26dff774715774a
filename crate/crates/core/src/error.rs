use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("malformed mask: {0}")]
    MalformedMask(String),

    #[error("empty segmentation")]
    EmptyMask,

    #[error("point ({x}, {y}) left the image")]
    LeftImage { x: f64, y: f64 },

    #[error("no consistent support for the motion fit")]
    NoSupport,

    #[error("box left the frame")]
    LeftFrame,

    #[error("invalid box ({x0}, {y0}, {x1}, {y1})")]
    InvalidBox { x0: f64, y0: f64, x1: f64, y1: f64 },

    #[error("malformed flow file {path}: {reason}")]
    BadFlow { path: PathBuf, reason: String },

    #[error("non-finite flow vector at pixel ({x}, {y})")]
    NonFiniteFlow { x: u32, y: u32 },

    #[error("missing record for frame {frame} in {path}")]
    MissingFrame { frame: usize, path: PathBuf },

    #[error("{path}:{line}: {reason}")]
    BadRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("frame {frame} out of range (video has {frames} frames)")]
    FrameOutOfRange { frame: usize, frames: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("predictions and ground truth disagree: {0}")]
    ProtocolMismatch(String),

    #[error("cost matrix: {0}")]
    BadMatrix(String),

    #[error("provider failed at frame {frame}: {source}")]
    Provider {
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by malformed input data (as opposed to
    /// configuration problems).
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::ProtocolMismatch(_) | Error::BadMatrix(_) => false,
            Error::Provider { source, .. } => source.is_data_error(),
            _ => true,
        }
    }
}
