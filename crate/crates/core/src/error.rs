use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("unsupported bayer pattern {0:?}; only RGGB is accepted")]
    UnsupportedPattern(String),

    #[error("invalid sensor metadata: {0}")]
    InvalidMetadata(String),

    #[error("patch of {patch}x{patch} does not fit in a {height}x{width} image")]
    PatchTooLarge { patch: usize, height: usize, width: usize },

    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    #[error("spatial dims {height}x{width} are not multiples of {multiple}; pad first")]
    PadRequired { height: usize, width: usize, multiple: usize },

    #[error("corrupted stream at byte {offset}: {reason}")]
    Decode { offset: usize, reason: String },

    #[error("bad container format: {0}")]
    Format(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("no preset for lambda {0}; pass the latent width K explicitly")]
    MissingK(f64),

    #[error("non-finite loss at iteration {iter}: {detail}")]
    NonFiniteLoss { iter: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse { path: path.into(), message: message.to_string() }
    }
}
