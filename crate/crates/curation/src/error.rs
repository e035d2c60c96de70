#[derive(Debug, thiserror::Error)]
pub enum CurationError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] vidgen_core::Error),
}

pub type Result<T, E = CurationError> = std::result::Result<T, E>;
