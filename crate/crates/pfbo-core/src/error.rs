use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error(transparent)]
    Tensor(#[from] pfbo_tensor::TensorError),

    #[error("training aborted at epoch {epoch}, step {step}: {reason}")]
    TrainAbort { epoch: usize, step: usize, reason: String, diagnostics: String },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("fit failed: {0}")]
    Fit(String),
}

impl CoreError {
    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        CoreError::Contract { op, detail: detail.into() }
    }

    pub fn param(detail: impl Into<String>) -> Self {
        CoreError::Param(detail.into())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
