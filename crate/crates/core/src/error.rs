use std::path::PathBuf;

use thiserror::Error;

use crate::filter::FilterReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no proposals survived: cannot normalize an empty score list")]
    NoProposals,

    #[error("cannot read frame {path}: {reason}")]
    FrameRead { path: PathBuf, reason: String },

    #[error("no frames found in {0}")]
    EmptySequence(PathBuf),

    #[error("duplicate frame number {index} in {dir}")]
    DuplicateFrame { dir: PathBuf, index: u32 },

    #[error("video rejected: {}", .0.rejection_reason())]
    Rejected(Box<FilterReport>),

    #[error("video skipped: {0}")]
    Skipped(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("box {bbox} lies outside {width}x{height} frame")]
    BoxOutOfFrame { bbox: String, width: u32, height: u32 },

    #[error("frame below minimum proposal size: {width}x{height} (need at least {min}x{min})")]
    FrameTooSmall { width: u32, height: u32, min: u32 },

    #[error("box area {area} below minimum of {min} px")]
    BoxTooSmall { area: u64, min: u64 },

    #[error("embedding length mismatch: {0} vs {1}")]
    EmbeddingLength(usize, usize),

    #[error("malformed {kind} file {path}: {reason}")]
    Malformed {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("missing external embeddings for {0}")]
    MissingEmbeddings(String),

    #[error("nothing mined")]
    NothingMined,

    #[error("filename collision: {0}")]
    Collision(String),

    #[error("invalid synthetic spec {entry}: {reason}")]
    InvalidSynthSpec { entry: String, reason: String },

    #[error("coverage mismatch, no ground truth for: {0}")]
    Coverage(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
