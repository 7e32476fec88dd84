use thiserror::Error;

pub type Result<T> = std::result::Result<T, SrmError>;

#[derive(Debug, Error)]
pub enum SrmError {
    /// Rejected at construction time (spectrum levels, config values, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("enumeration too large: {paths} trajectories exceed the limit of {limit}")]
    Size { paths: u128, limit: u128 },

    #[error("training became unstable: {0}")]
    Instability(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unsupported format version {found:?} (expected {expected})")]
    Version { found: String, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("inconsistent {what}: expected {expected}, found {actual}")]
    Consistency {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SrmError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        SrmError::Input(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        SrmError::Parameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        SrmError::Shape(msg.into())
    }
}
