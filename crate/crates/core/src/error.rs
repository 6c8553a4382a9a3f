use thiserror::Error;

/// Errors produced by the fusion library and the file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("class index {class} out of range for {classes} classes")]
    InvalidClass { class: usize, classes: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("log of zero probability at {0}; floor the confusion matrix first")]
    LogDomain(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            line,
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::Io { .. } => 3,
            Error::Format { .. } | Error::InvalidClass { .. } => 4,
            Error::ShapeMismatch(_) => 5,
            Error::DegenerateModel(_) | Error::LogDomain(_) | Error::NumericalFailure(_) => 6,
        }
    }
}
