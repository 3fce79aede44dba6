use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("no embedding for image_id '{0}'")]
    Lookup(String),

    #[error("cannot read image for image_id '{image_id}' ({path}): {message}")]
    Image {
        image_id: String,
        path: PathBuf,
        message: String,
    },

    #[error("lineup setup: {0}")]
    Setup(String),

    #[error("no eligible probes to evaluate")]
    EmptyEvaluation,

    #[error("out of range: {0}")]
    Range(String),

    #[error("config key '{key}': {message}")]
    Config { key: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "parameter",
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::Format { .. } => "format",
            Error::Lookup(_) => "lookup",
            Error::Image { .. } => "image",
            Error::Setup(_) => "setup",
            Error::EmptyEvaluation => "empty_evaluation",
            Error::Range(_) => "range",
            Error::Config { .. } => "config",
        }
    }

    /// Process exit code: 2 config, 4 I/O, 3 everything data-related.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}
