use std::path::{Path, PathBuf};

/// Failure of a command, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, configuration or input data (exit 2).
    #[error("{0}")]
    Usage(String),
    /// A file could not be read or written (exit 3).
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A numerical computation stopped producing finite values (exit 4).
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Diverged(_) => 4,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<lagnet_core::Error> for CliError {
    fn from(e: lagnet_core::Error) -> Self {
        use lagnet_core::Error as E;
        match e {
            E::NonFinite { .. } | E::Generation { .. } | E::Rollout { .. } | E::Diverged { .. } => {
                CliError::Diverged(e.to_string())
            }
            E::Dimension { .. } | E::Config(_) | E::Usage(_) => CliError::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
