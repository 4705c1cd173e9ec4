use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("parse error at {record}: {message}")]
    Parse { record: String, message: String },
    #[error("coverage violation: {0}")]
    Coverage(String),
    #[error("refusing exact solve: {what} = {got} exceeds limit {limit}")]
    OracleLimit {
        what: &'static str,
        got: usize,
        limit: usize,
    },
    #[error("no worker checkpoint with pretrain size {required}")]
    MissingCheckpoint { required: usize },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] autodiff::AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
