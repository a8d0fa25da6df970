use pnc_core::PncError;

/// A failed command. Each variant maps to one process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or malformed input, or files that disagree with each other.
    #[error("{0}")]
    Input(String),
    /// Input that parses but is invalid for the computation (apex rows).
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Parameter(String),
    #[error("{0}")]
    Numerical(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Data(_) => 3,
            CliError::Parameter(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl From<PncError> for CliError {
    fn from(e: PncError) -> Self {
        let msg = e.to_string();
        match e {
            PncError::DimensionMismatch { .. } => CliError::Input(msg),
            PncError::Apex { .. } | PncError::NotOnCone { .. } | PncError::Degenerate(_) | PncError::Domain(_) => {
                CliError::Data(msg)
            }
            PncError::InvalidParameter(_) => CliError::Parameter(msg),
            PncError::Numerical(_) | PncError::TooManySkipped { .. } => CliError::Numerical(msg),
        }
    }
}

pub(crate) fn io_error(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}
