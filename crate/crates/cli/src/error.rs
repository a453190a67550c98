use std::path::PathBuf;

/// Failure of a command, carrying its exit code class.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("check failed: {0}")]
    Check(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] hyperview::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 ok, 1 failed check, 2 bad configuration or input, 3 I/O, 4 divergence.
    pub fn exit_code(&self) -> u8 {
        use hyperview::Error as E;
        match self {
            CliError::Check(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(E::Io { .. } | E::Format { .. }) => 3,
            CliError::Core(E::DivergenceDetected { .. }) => 4,
            CliError::Core(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
