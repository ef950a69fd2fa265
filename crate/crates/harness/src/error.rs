use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] visemekl::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0} run(s) failed")]
    RunFailures(usize),
}

impl HarnessError {
    /// Process exit code: 1 for configuration problems, 2 for failed runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::RunFailures(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
