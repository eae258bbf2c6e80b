use s2dm::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] Error),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("refusing to run: estimated {estimate} training iterations exceeds the budget of {cap}; pass --force to run anyway")]
    Budget { estimate: u64, cap: u64 },
    #[error("{failed} oracle check(s) failed")]
    OracleFailed { failed: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                Error::Numeric(_) | Error::Divergence { .. } | Error::Domain(_) => EXIT_NUMERIC,
                _ => EXIT_USAGE,
            },
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Budget { .. } => EXIT_BUDGET,
            CliError::OracleFailed { .. } => EXIT_NUMERIC,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
