use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid configuration value; `key` names the offending setting.
    #[error("invalid configuration `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("index {index} out of range {lo}..={hi}")]
    Index { index: usize, lo: usize, hi: usize },
    #[error("range error: {0}")]
    Range(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: u64,
        column: usize,
        msg: String,
    },
    #[error("format version mismatch: file has version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("training diverged at iteration {iteration}: combined loss {loss}")]
    Divergence { iteration: usize, loss: f64 },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
