use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::losses::LossBreakdown;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("failed to decode {}: {reason}", path.display())]
    Decode { path: PathBuf, reason: String },

    #[error("unsupported format in {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("cannot ingest {}: {reason}", path.display())]
    Ingestion { path: PathBuf, reason: String },

    #[error("model initialization failed: {0}")]
    Init(String),

    #[error("bad checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value in {term}")]
    NonFinite { term: &'static str },

    #[error("training diverged at step {step}: {breakdown}")]
    Diverged { step: u64, breakdown: Box<LossBreakdown> },

    #[error("reference pairing failed, unmatched files: {}", .0.join(", "))]
    Pairing(Vec<String>),

    #[error("bad record on line {line}: {reason}")]
    Record { line: usize, reason: String },

    #[error("external scorer failed: {0}")]
    External(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Short machine-readable name of the error category.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Argument(_) => "argument",
            Error::Decode { .. } => "decode",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Dataset(_) => "dataset",
            Error::Ingestion { .. } => "ingestion",
            Error::Init(_) => "init",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Config(_) => "config",
            Error::NonFinite { .. } => "numeric",
            Error::Diverged { .. } => "numeric",
            Error::Pairing(_) => "pairing",
            Error::Record { .. } => "record",
            Error::External(_) => "external",
        }
    }

    /// Process exit status used by the command line front end.
    ///
    /// 3 covers validation failures, 4 numeric failures and 1 everything
    /// that went wrong while touching the outside world.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. } | Error::Diverged { .. } => 4,
            Error::Io { .. } | Error::External(_) => 1,
            _ => 3,
        }
    }
}
