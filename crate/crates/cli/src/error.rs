use hmc_smoother::error::Error as CoreError;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Input(String),
}

impl CliError {
    /// Process exit status: 2 config, 3 numeric divergence, 4 sampler abort, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(CoreError::Divergence { .. }) => 3,
            CliError::Core(CoreError::SamplerAbort { .. }) => 4,
            _ => 1,
        }
    }
}
