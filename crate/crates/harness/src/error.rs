use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] opex_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("checksum failure: {0}")]
    ChecksumFailure(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown repair method '{0}'")]
    UnknownMethod(String),
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.display().to_string(), source }
}
