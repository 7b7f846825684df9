//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("truncated payload in {path}: expected {expected} bytes, got {actual}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty segment")]
    EmptySegment,

    #[error("no observations")]
    NoObservations,

    #[error("overlapping segments: instances {0} and {1} share pixels in frame {2}")]
    OverlappingSegments(u32, u32, usize),

    #[error("degenerate camera placement: camera inside object {0} at frame {1}")]
    DegenerateCamera(u32, usize),

    #[error("unknown category \"{0}\"")]
    UnknownCategory(String),

    #[error("zero vector passed to relevancy")]
    ZeroVector,

    #[error("loss diverged (NaN) at iteration {0}")]
    Diverged(usize),

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("missing input for stage {stage}: {path}")]
    MissingInput { stage: &'static str, path: PathBuf },

    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
