use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsiError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("drawn delay {delay:.3e} s exceeds the resolvable window {window:.3e} s")]
    DelayWindow { delay: f64, window: f64 },
    #[error("data integrity: {0}")]
    Integrity(String),
    #[error("training diverged at epoch {epoch} ({what})")]
    Divergence { epoch: usize, what: String },
    #[error(transparent)]
    Nn(#[from] csi_nn::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CsiError>;

pub(crate) fn config(msg: impl Into<String>) -> CsiError {
    CsiError::Config(msg.into())
}
