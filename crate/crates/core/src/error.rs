use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated an operation's precondition (wrong encoding, non-unit normals, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("invalid scene (line {line}): {msg}")]
    InvalidScene { line: usize, msg: String },

    #[error("invalid config (line {line}): {msg}")]
    Config { line: usize, msg: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("alignment failed: {0}")]
    AlignmentFailed(String),

    #[error("modality mismatch: {0}")]
    ModalityMismatch(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn mismatch(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for errors caused by bad user input (files, configs, modality)
    /// rather than a failed computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. }
                | Error::InvalidScene { .. }
                | Error::Config { .. }
                | Error::ModalityMismatch(_)
                | Error::Io { .. }
                | Error::ShapeMismatch { .. }
        )
    }
}
