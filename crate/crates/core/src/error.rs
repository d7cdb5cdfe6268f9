use thiserror::Error;

/// Errors produced anywhere in the decomposition and detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular value decomposition did not converge")]
    SvdFailure,

    #[error("format error: {0}")]
    Format(String),

    #[error("empty matrix: {0}")]
    EmptyMatrix(String),

    #[error("missing tag data for: {}", .0.join(", "))]
    MissingTags(Vec<String>),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
