use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] vidgen_core::Error),
    #[error(transparent)]
    Tensor(#[from] vidgen_core::TensorError),
    #[error(transparent)]
    Curation(#[from] vidgen_curation::CurationError),
    #[error(transparent)]
    Encode(#[from] vidgen_encode::Error),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 3 for configuration problems, 1 for runtime
    /// failures. Usage errors exit with 2 before a command runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Core(vidgen_core::Error::Config(_)) => 3,
            CliError::Curation(vidgen_curation::CurationError::Config(_)) => 3,
            CliError::Encode(vidgen_encode::Error::Config(_) | vidgen_encode::Error::Bind { .. }) => 3,
            _ => 1,
        }
    }
}

pub fn file_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::File { path, source }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
