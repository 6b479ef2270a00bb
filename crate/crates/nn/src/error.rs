use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer `{layer}`: {message}")]
    Shape { layer: String, message: String },

    #[error("input shape {got:?} does not match model input {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("cache was produced by a different model")]
    ForeignCache,

    #[error("backward requires a cache recorded in train mode")]
    EvalCache,

    #[error("parameter length mismatch: expected {expected}, got {got}")]
    ParamLength { expected: usize, got: usize },

    #[error("model spec parse error on line {line}: {message}")]
    SpecParse { line: usize, message: String },

    #[error("weights file: {0}")]
    Weights(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
