use std::path::PathBuf;

use csi_mtl::CsiError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data integrity: {0}")]
    Integrity(String),
    #[error("output directory {dir} is locked by another run (remove {lock} if that run is gone)")]
    Locked { dir: PathBuf, lock: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CsiError),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for integrity failures, 4 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Integrity(_) => 3,
            CliError::Core(e) => match e {
                CsiError::Config(_) | CsiError::Argument(_) | CsiError::DelayWindow { .. } => 2,
                CsiError::Integrity(_) | CsiError::Nn(csi_nn::NnError::Weights(_)) | CsiError::Nn(csi_nn::NnError::SpecParse { .. }) => 3,
                CsiError::Divergence { .. } => 4,
                _ => 1,
            },
            CliError::Locked { .. } | CliError::Io { .. } => 1,
        }
    }
}
