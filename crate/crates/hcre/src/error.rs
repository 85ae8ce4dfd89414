use std::path::PathBuf;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] hcre_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("config {}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model or weights failed validation: {0}")]
    Validation(String),
}

impl HarnessError {
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Core(e) => e.kind(),
            HarnessError::Io { .. } => "io",
            HarnessError::Csv { .. } => "csv",
            HarnessError::Config { .. } => "config",
            HarnessError::InvalidArgument(_) => "invalid_argument",
            HarnessError::Validation(_) => "validation",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}
