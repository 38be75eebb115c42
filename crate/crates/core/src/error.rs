use thiserror::Error;

/// Errors produced by the latentfit library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("degenerate fit: {0}")]
    FitDegenerate(String),

    #[error("estimate unavailable: {0}")]
    EstimateUnavailable(String),

    #[error("training diverged in stage {stage} at epoch {epoch}")]
    TrainingDiverged { stage: u8, epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
