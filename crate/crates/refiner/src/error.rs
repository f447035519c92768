use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single failed exchange with a backend.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("unreadable response: {0}")]
    InvalidResponse(String),
    #[error("backend refused request: {0}")]
    Rejected(String),
}

impl TransportError {
    /// Timeouts, dropped connections, 429 and 5xx are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Timeout | TransportError::Connection(_) => true,
            TransportError::Status { code, .. } => *code == 429 || (500..600).contains(code),
            TransportError::InvalidResponse(_) | TransportError::Rejected(_) => false,
        }
    }

    pub fn is_rate_limit(&self) -> bool {
        matches!(self, TransportError::Status { code: 429, .. })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode image {path}: {reason}")]
    ImageDecode { path: String, reason: String },
    #[error("cannot encode image: {0}")]
    ImageEncode(String),
    #[error("transport failed after {attempts} attempt(s)")]
    Transport {
        attempts: usize,
        #[source]
        source: TransportError,
    },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: usize },
    #[error("model returned an empty response")]
    EmptyResponse,
    #[error("invalid prompt template: {0}")]
    InvalidTemplate(String),
    #[error("invalid client config: {0}")]
    InvalidConfig(String),
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("no pose for {0}")]
    MissingPose(String),
    #[error("no descriptor for {0}")]
    MissingDescriptor(String),
    #[error("invalid transcript, line {line}: {reason}")]
    Transcript { line: usize, reason: String },
    #[error("invalid rerank input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Core(#[from] vpr_core::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
