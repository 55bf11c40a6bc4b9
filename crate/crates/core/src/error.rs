use std::path::PathBuf;

use thiserror::Error;
use timbre_nn::NnError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("audio clip is empty")]
    EmptyAudio,
    #[error("audio too short: need at least {required} {unit}, got {got}")]
    ShortAudio {
        required: usize,
        got: usize,
        unit: &'static str,
    },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("mel spectrogram lacks normalization statistics")]
    MissingStats,
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("grid {height}x{width} is smaller than the {window}x{window} window")]
    Size { height: usize, width: usize, window: usize },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint payload corrupt: {0}")]
    Checksum(String),
    #[error("non-finite loss term `{term}` in {report}")]
    NonFiniteLoss { term: &'static str, report: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
