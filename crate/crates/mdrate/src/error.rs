use thiserror::Error;

/// Failure classes with their process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or unreadable input (exit 2).
    #[error("configuration error: {0}")]
    Config(String),
    /// Output could not be written (exit 2).
    #[error("i/o error: {0}")]
    Io(String),
    /// A solver or check missed its tolerance (exit 1).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            CliError::Numerical(_) => "numerical-failure",
            CliError::Config(_) => "config-error",
            CliError::Io(_) => "io-error",
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
