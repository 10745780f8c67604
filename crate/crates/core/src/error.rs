use std::fmt;
use std::io;
use std::path::PathBuf;

use autodiff::AdError;

#[derive(Debug)]
pub enum Error {
    Io { path: PathBuf, source: io::Error },
    /// A CSV record that could not be parsed; `line` is 1-based.
    Csv { line: u64, message: String },
    EmptyCorpus,
    InsufficientExamples { class: usize, available: usize, requested: usize },
    InvalidData(String),
    Autodiff(AdError),
    Config(String),
    UnknownConfigKey(String),
    CacheFormat(String),
    CheckpointVersion { found: u32, expected: u32 },
    CheckpointTruncated(String),
    CheckpointConfigMismatch(String),
    CheckpointFormat(String),
    VocabMismatch { checkpoint: String, cache: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Error::Csv { line, message } => write!(f, "line {line}: {message}"),
            Error::EmptyCorpus => f.write_str("corpus is empty"),
            Error::InsufficientExamples { class, available, requested } => write!(
                f,
                "class {class} has {available} examples, {requested} requested"
            ),
            Error::InvalidData(msg) => write!(f, "invalid data: {msg}"),
            Error::Autodiff(e) => write!(f, "{e}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::UnknownConfigKey(key) => write!(f, "unknown config key {key:?}"),
            Error::CacheFormat(msg) => write!(f, "bad dataset cache: {msg}"),
            Error::CheckpointVersion { found, expected } => {
                write!(f, "checkpoint format version {found}, expected {expected}")
            }
            Error::CheckpointTruncated(msg) => write!(f, "checkpoint truncated: {msg}"),
            Error::CheckpointConfigMismatch(msg) => write!(f, "checkpoint config mismatch: {msg}"),
            Error::CheckpointFormat(msg) => write!(f, "malformed checkpoint: {msg}"),
            Error::VocabMismatch { checkpoint, cache } => write!(
                f,
                "vocabulary mismatch: checkpoint {checkpoint}, cache {cache}"
            ),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            Error::Autodiff(e) => Some(e),
            _ => None,
        }
    }
}

impl From<AdError> for Error {
    fn from(e: AdError) -> Self {
        Error::Autodiff(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
