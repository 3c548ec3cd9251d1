use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Invalid(String),
    #[error("unknown series {0}")]
    UnknownSeries(String),
    #[error("cannot reach server: {0}")]
    Connection(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Invalid(_) => 4,
            CliError::UnknownSeries(_) => 5,
            CliError::Connection(_) => 6,
        }
    }
}
