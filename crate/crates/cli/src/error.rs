use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] varblur::Error),
    #[error("{path}: {source}")]
    CoreAt {
        path: String,
        source: varblur::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn at(path: impl AsRef<std::path::Path>) -> impl FnOnce(varblur::Error) -> Self {
        let path = path.as_ref().display().to_string();
        move |source| CliError::CoreAt { path, source }
    }

    /// 1 usage, 2 I/O or unreadable data, 3 invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } | CliError::Json { .. } | CliError::Csv(_) => 2,
            CliError::Core(e) | CliError::CoreAt { source: e, .. } => match e {
                varblur::Error::InvalidParameter(_) => 1,
                varblur::Error::Io(_) | varblur::Error::Codec(_) | varblur::Error::Format(_) => 2,
                varblur::Error::Invariant(_) | varblur::Error::DimensionMismatch(_) => 3,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
