use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid bounding box [{x_min}, {y_min}, {x_max}, {y_max}]: {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        reason: &'static str,
    },

    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),

    /// Comparing histograms with different bin counts is a caller bug.
    #[error("histogram bin count mismatch: {left} vs {right}")]
    BinMismatch { left: usize, right: usize },

    #[error("bounding box lies entirely outside the {width}x{height} image")]
    RegionOutsideImage { width: u32, height: u32 },

    #[error("colour data unavailable: {0}")]
    MissingColour(String),

    #[error("frame {got} out of order, expected {expected}")]
    FrameOrder { expected: u64, got: u64 },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for bad parameters, 2 for data errors, 3 for
    /// internal invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Invariant(_) | Error::BinMismatch { .. } => 3,
            _ => 2,
        }
    }
}
