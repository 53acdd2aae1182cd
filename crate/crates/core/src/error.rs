use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure category; drives CLI exit codes and HTTP status mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing class: {0}")]
    MissingClass(String),

    #[error("{what} has {n} rows but the configured cap is {cap}")]
    CapExceeded { what: &'static str, n: usize, cap: usize },

    #[error("neighbor graph is disconnected; component sizes {sizes:?}")]
    Disconnected { sizes: Vec<usize> },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Disconnected { .. } | Error::Degenerate(_) | Error::Numeric(_) => {
                ErrorKind::Numeric
            }
            _ => ErrorKind::Data,
        }
    }

    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::InvalidInput(_) => "invalid_input",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::MissingClass(_) => "missing_class",
            Error::CapExceeded { .. } => "cap_exceeded",
            Error::Disconnected { .. } => "disconnected_graph",
            Error::Degenerate(_) => "degenerate_data",
            Error::Numeric(_) => "numeric_failure",
            Error::Io { .. } => "io",
            Error::Decode { .. } => "decode",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}
