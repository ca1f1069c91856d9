//! Crate-wide error type.
//!
//! Variants are grouped by how the CLI maps them to exit codes: configuration
//! problems exit 2, data problems exit 3.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // --- configuration ---
    #[error("config: {0}")]
    Config(String),
    #[error("config {path}: line {line}: {msg}")]
    ConfigParse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    // --- data ---
    #[error("manifest {path}: line {line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("sample {sample_id}: label character {ch:?} is not in the alphabet")]
    UnknownLabelChar { sample_id: String, ch: char },
    #[error("sample {sample_id}: referenced file {path} does not exist")]
    MissingClipFile { sample_id: String, path: PathBuf },
    #[error("{path}: parse error at byte offset {offset}: {msg}")]
    FileFormat {
        path: PathBuf,
        offset: u64,
        msg: String,
    },
    #[error("{path}: io error: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("data: {0}")]
    Data(String),

    // --- numerics / model ---
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("ctc: label needs at least {required} frames but only {frames} are available")]
    LabelTooLong { required: usize, frames: usize },
    #[error("training aborted, non-finite loss on sample(s): {}", sample_ids.join(", "))]
    NonFiniteLoss { sample_ids: Vec<String> },
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code the CLI contract assigns to this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigParse { .. } => 2,
            Error::Manifest { .. }
            | Error::UnknownLabelChar { .. }
            | Error::MissingClipFile { .. }
            | Error::FileFormat { .. }
            | Error::Io { .. }
            | Error::Data(_)
            | Error::Checkpoint { .. } => 3,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
