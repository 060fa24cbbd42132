use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tuning parameter lies outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Input data violates a model assumption (e.g. a negative intensity).
    #[error("invalid data: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Malformed file content, with the byte offset where decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code, used as the CLI error prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parameter(_) => "E_PARAM",
            Error::Data(_) => "E_DATA",
            Error::Shape(_) => "E_SHAPE",
            Error::Numeric(_) => "E_NUMERIC",
            Error::Format { .. } => "E_FORMAT",
            Error::Io(_) => "E_IO",
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
