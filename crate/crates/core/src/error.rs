use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("attention trace is empty")]
    EmptyTrace,

    #[error("no subject nouns found in prompt {prompt:?}; pass explicit nouns with --nouns")]
    NoNouns { prompt: String },

    #[error("override noun {0:?} does not occur in the prompt")]
    MissingOverrideToken(String),

    #[error("noun {0:?} does not match any attention token column")]
    UnmappedNoun(String),

    #[error("foreground map has no positive weight; nothing to fuse")]
    NoForegroundEvidence,

    #[error("grabcut needs both foreground and background seeds ({0} set is empty)")]
    EmptySeeds(&'static str),

    #[error("trace format: {0}")]
    TraceFormat(String),

    #[error("trace tensor {name:?}: {reason}")]
    TraceTensor { name: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png error on {path}: {source}")]
    Png {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad or missing input data rather than a bug.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::ShapeMismatch { .. }
                | Error::InvalidArgument(_)
                | Error::EmptyTrace
                | Error::NoNouns { .. }
                | Error::MissingOverrideToken(_)
                | Error::UnmappedNoun(_)
                | Error::NoForegroundEvidence
                | Error::EmptySeeds(_)
                | Error::TraceFormat(_)
                | Error::TraceTensor { .. }
                | Error::Png { .. }
        )
    }
}
