use cof_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum CofError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("ambiguous selector: {0}")]
    AmbiguousSelector(String),
    #[error("codec: {0}")]
    Codec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CofError> = std::result::Result<T, E>;
