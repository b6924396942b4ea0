use thiserror::Error;
use topopi_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config keys or values.
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    /// Training diverged.
    #[error("{0}")]
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
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub(crate) fn data(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}
