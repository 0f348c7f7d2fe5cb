use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {0}")]
    InputTooShort(String),

    #[error("input too short to perturb: {frames} frames, chunk length {chunk_len}")]
    TooShortToPerturb { frames: usize, chunk_len: usize },

    #[error("unaligned sequences: {0}")]
    Unaligned(String),

    #[error("frames not aligned to downsample factor: {frames} frames, factor {factor}")]
    FramesNotAligned { frames: usize, factor: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("classification requires >=2 speakers, corpus has {0}")]
    TooFewSpeakers(usize),

    #[error("no speech content")]
    NoSpeechContent,

    #[error("training diverged at iteration {iteration}: non-finite loss")]
    Diverged { iteration: usize },

    #[error("{path}:{line}: malformed manifest: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty evaluation set")]
    EmptySet,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
