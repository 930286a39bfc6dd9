use thiserror::Error;

/// Failure classes, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl From<seqreg::Error> for CliError {
    fn from(e: seqreg::Error) -> Self {
        use seqreg::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidParameter(_) => CliError::Usage(msg),
            E::Solver(_) | E::NonFinite(_) => CliError::Solver(msg),
            E::InvalidGrid(_) | E::InvalidImage(_) | E::GridMismatch(_) | E::Parse { .. } | E::Io { .. } => {
                CliError::Data(msg)
            }
        }
    }
}
