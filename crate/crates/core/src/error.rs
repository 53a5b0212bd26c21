use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid experiment or call configuration (bad BER, empty dataset, plan mismatch, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Tensor or layer shapes that do not chain.
    #[error("shape error: {0}")]
    Shape(String),

    /// Convolution parameters the selected engine cannot execute.
    #[error("unsupported convolution: {0}")]
    UnsupportedConv(String),

    #[error("bit position {position} out of range for {bit_width}-bit value")]
    InvalidBitPosition { position: u32, bit_width: u32 },

    #[error("model format error: {0}")]
    Format(String),

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("io error on {path}: {source}")]
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

    /// True for errors caused by the caller's inputs rather than by execution.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Shape(_)
                | Error::UnsupportedConv(_)
                | Error::InvalidBitPosition { .. }
                | Error::Format(_)
                | Error::Checksum { .. }
                | Error::Json(_)
        )
    }
}
