use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (unsupported sizes, bad combinations).
    #[error("configuration error: {0}")]
    Config(String),

    /// Contract violation between components (dimension mismatches, stale tapes).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite values where finite ones are required.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Dataset or instance generation failed after bounded retries.
    #[error("generation error: {0}")]
    Generation(String),

    /// Training diverged or hit a degenerate state (e.g. codebook collapse).
    #[error("training error: {0}")]
    Training(String),

    /// A persisted artifact could not be parsed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}
