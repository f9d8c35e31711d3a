use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },

    #[error("{}: cannot write: {source}", path.display())]
    Write { path: PathBuf, source: io::Error },

    #[error("{}: bad split dump: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("invalid value: {0}")]
    Value(String),

    #[error("run is missing required split `{0}`")]
    MissingSplit(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("adversarial evaluation unavailable: {0}")]
    AdvUnavailable(String),

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error(transparent)]
    Core(#[from] reliascore_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn write(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Write { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code: 1 for bad input, 2 for failures of the engine or
    /// its environment.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Write { .. } => 2,
            _ => 1,
        }
    }
}
