use std::io;

/// Errors produced anywhere in the library.
///
/// Every variant maps onto a short machine-readable category via
/// [`Error::category`], which the command-line runner prints on failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: u8, classes: usize },

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("untrained normalization statistics in `{0}`")]
    UntrainedStats(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error("refusing to overwrite non-empty output `{0}`")]
    WouldOverwrite(String),

    #[error("io: {0}")]
    Io(#[from] io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Label { .. } => "label",
            Error::MissingGradient(_) => "missing-gradient",
            Error::NonFinite(_) => "non-finite",
            Error::UntrainedStats(_) => "untrained-stats",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Usage(_) => "usage",
            Error::WouldOverwrite(_) => "overwrite",
            Error::Io(_) => "io",
            Error::Csv(_) => "io",
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
