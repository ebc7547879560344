use thiserror::Error;

/// Errors surfaced by dataset loading, configuration, and sampling.
#[derive(Debug, Error)]
pub enum StzipError {
    /// A configuration value is out of range or internally inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed input data (CSV rows, knot files, grids).
    #[error("invalid input{}: {message}", row.map(|r| format!(" at data row {r}")).unwrap_or_default())]
    Input {
        message: String,
        /// 1-based data row (excluding header) when the problem is row-local.
        row: Option<usize>,
    },

    /// A numerical operation failed in a way that cannot be recovered,
    /// e.g. a covariance matrix that stays non-positive-definite after
    /// jitter escalation.
    #[error("numerical failure in {block}{}: {message}", iteration.map(|i| format!(" (iteration {i})")).unwrap_or_default())]
    Numerical {
        /// Name of the sampler block or kernel operation that failed.
        block: String,
        iteration: Option<usize>,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl StzipError {
    pub fn config(message: impl Into<String>) -> Self {
        StzipError::Config(message.into())
    }

    pub fn input(message: impl Into<String>) -> Self {
        StzipError::Input { message: message.into(), row: None }
    }

    pub fn input_at(message: impl Into<String>, row: usize) -> Self {
        StzipError::Input { message: message.into(), row: Some(row) }
    }

    pub fn numerical(block: impl Into<String>, message: impl Into<String>) -> Self {
        StzipError::Numerical { block: block.into(), iteration: None, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, StzipError>;
