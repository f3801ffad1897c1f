use otj_core::HarnessError;

/// A failed command and the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("pool mismatch: {0}")]
    PoolMismatch(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::PoolMismatch(_) => 4,
            CliError::Bind { .. } => 5,
            CliError::Other(_) => 1,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => CliError::Config(e.to_string()),
            HarnessError::Parse { .. } => CliError::Data(e.to_string()),
            HarnessError::PoolMismatch(_) => CliError::PoolMismatch(e.to_string()),
            HarnessError::Env(otj_core::EnvError::PoolExhausted { .. }) => {
                CliError::PoolMismatch(e.to_string())
            }
            HarnessError::Env(_) => CliError::Config(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}
