use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("{}:{line}: {reason}", path.display())]
    Label { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Core(#[from] birdrone_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Format { path: path.into(), reason: reason.into() }
    }

    /// Process exit status: 1 usage, 2 runtime, 3 verification.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Verification(_) => 3,
            Self::Core(birdrone_core::Error::Config(_)) => 1,
            _ => 2,
        }
    }
}
