use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed event: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: missing field `{field}`")]
    Schema { line: usize, field: &'static str },

    #[error("events reference prompts missing from the manifest: {}", orphans.join(", "))]
    Referential { orphans: Vec<String> },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no prompts found in {0}")]
    NoPrompts(PathBuf),

    #[error("trace failed validation with {0} fatal violation(s)")]
    ValidationFatal(usize),

    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined: {0}")]
    Undefined(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Schema { .. }
            | Error::Referential { .. }
            | Error::ValidationFatal(_) => 2,
            Error::Manifest(_) | Error::Config(_) | Error::NoPrompts(_) => 3,
            Error::Io { .. } => 4,
            _ => 1,
        }
    }
}
