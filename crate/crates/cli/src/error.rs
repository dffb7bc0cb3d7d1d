use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<fainr_core::Error> for CliError {
    fn from(e: fainr_core::Error) -> Self {
        use fainr_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Contract(_) | E::Dimension { .. } => CliError::Usage(msg),
            E::Diverged { .. } | E::NonFiniteGradient(_) => CliError::Numeric(msg),
            E::Data(_) | E::Io { .. } | E::Json(_) | E::Checkpoint { .. } => CliError::Data(msg),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
