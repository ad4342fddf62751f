use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Calibration,
    Artifact,
    Simulation,
    Other,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("model config error: {0}")]
    Config(String),
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("calibration error: {0}")]
    Calibration(String),
    #[error("quantization error in layer `{layer}`: {message}")]
    Quantization { layer: String, message: String },
    #[error("quantized artifact error: {0}")]
    Artifact(String),
    #[error("layer `{layer}` ({kind}) cannot be routed to any engine")]
    Unroutable { layer: String, kind: String },
    #[error("schedule violation: {0}")]
    Schedule(String),
    #[error("tensor file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Json { .. } => ErrorClass::Config,
            Error::Calibration(_) => ErrorClass::Calibration,
            Error::Artifact(_) | Error::Format(_) | Error::Quantization { .. } => {
                ErrorClass::Artifact
            }
            Error::Unroutable { .. } | Error::Schedule(_) => ErrorClass::Simulation,
            _ => ErrorClass::Other,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}
