use std::fmt;
use std::path::Path;

use tfa_autodiff::AutodiffError;

/// Failure of a command, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unknown config keys or inconsistent settings (exit 1).
    Usage(String),
    /// Unreadable or malformed inputs and failed writes (exit 2).
    Data(String),
    /// Non-finite losses or failed gradient checks (exit 3).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<tfa_core::Error> for CliError {
    fn from(e: tfa_core::Error) -> Self {
        match e {
            tfa_core::Error::NonFiniteLoss { .. }
            | tfa_core::Error::Autodiff(AutodiffError::NonDeterministic { .. }) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AutodiffError> for CliError {
    fn from(e: AutodiffError) -> Self {
        tfa_core::Error::from(e).into()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
