use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] mtd_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use mtd_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(E::NonFiniteLoss { .. } | E::Optimizer(_) | E::Dimension { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}
