use gdb_core::Error;

/// Command failure with its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    /// Unreadable, unwritable or malformed files and inputs that do not fit together.
    #[error("io error: {0}")]
    Io(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Config(e.to_string()),
            Error::Divergence { step, .. } => CliError::Divergence(format!(
                "{e}; last finite step {}",
                step.checked_sub(1).map_or("none".to_string(), |s| s.to_string())
            )),
            Error::NonFinite(_) => CliError::Divergence(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
