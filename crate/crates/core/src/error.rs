use thiserror::Error;

/// Errors raised anywhere in the simulator, trainer or harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; always raised before a run starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// A physical quantity outside its domain (non-positive rate, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an interface contract (shape mismatch, malformed allocation, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// NaN or infinite values showed up in a numerical routine.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
