use thiserror::Error;

/// Failures mapped onto the process exit code contract.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed inputs: exit code 2.
    #[error("{0}")]
    Input(String),
    /// Invalid configuration or tensor shapes: exit code 3.
    #[error("{0}")]
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
        }
    }
}

impl From<wordlattice::Error> for CliError {
    fn from(e: wordlattice::Error) -> Self {
        use wordlattice::Error as E;
        match e {
            E::Config(_) | E::Shape(_) | E::PositionOverflow { .. } => CliError::Config(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn input_err(context: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{context}: {e}"))
}
