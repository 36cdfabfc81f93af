use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_NOT_CONVERGED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] sepba::Error),
    /// The run finished and wrote its outputs, but did not converge.
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use sepba::Error as E;
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
            CliError::Core(e) => match e {
                E::Io { .. } | E::Format { .. } | E::InvalidInput(_) | E::TooLarge(_) => EXIT_INPUT,
                E::InvalidSample { .. }
                | E::RankDeficient { .. }
                | E::InsufficientOverlap { .. }
                | E::Diverged { .. } => EXIT_NOT_CONVERGED,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
