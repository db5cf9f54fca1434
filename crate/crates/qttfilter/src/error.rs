use qttfilter_core::Error as CoreError;
use std::path::PathBuf;

/// Failures of the command-line layer, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input {path}: {reason}")]
    Input { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn input(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Input { path: path.into(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// 2 for anything the user can fix in the configuration or inputs,
    /// 3 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Input { .. } => 2,
            Self::Io { .. } => 1,
            Self::Core(e) => match e {
                CoreError::NonFinite(_) | CoreError::RankCap { .. } | CoreError::ZeroMass | CoreError::Unstable(_) => 3,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
