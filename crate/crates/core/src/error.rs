use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value failed validation. `field` names the offending
    /// setting and becomes part of the machine-readable error code.
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("reference oracle failed: {0}")]
    OracleFailure(String),

    #[error("ingestion error at row {row}, column \"{column}\": {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Stable dotted identifier, e.g. `config.lambda` or `numeric`.
    pub fn code(&self) -> String {
        match self {
            Error::Config { field, .. } => format!("config.{field}"),
            Error::Argument(_) => "argument".into(),
            Error::Numeric(_) => "numeric".into(),
            Error::Internal(_) => "internal".into(),
            Error::Usage(_) => "usage".into(),
            Error::OracleFailure(_) => "oracle".into(),
            Error::Ingestion { .. } => "ingestion".into(),
            Error::Training { .. } => "training.diverged".into(),
            Error::Io(_) => "io".into(),
            Error::Csv(_) => "csv".into(),
            Error::Json(_) => "json".into(),
        }
    }
}
