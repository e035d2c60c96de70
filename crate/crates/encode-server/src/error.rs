use crate::protocol::ProtocolError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("request timed out")]
    Timeout,
    #[error("server error {code}: {message}")]
    Server { code: u16, message: String },
    #[error("connection closed by peer")]
    Closed,
    #[error("bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("batch source failed: {0}")]
    Source(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] vidgen_core::TensorError),
    #[error(transparent)]
    Core(#[from] vidgen_core::Error),
    #[error(transparent)]
    Curation(#[from] vidgen_curation::CurationError),
}

impl Error {
    /// Transient transport failures worth another attempt.
    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Timeout | Error::Closed)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
