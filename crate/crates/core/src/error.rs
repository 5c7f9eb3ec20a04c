use thiserror::Error;

/// Errors surfaced by the benchmark core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("training failure: model `{model_id}` reached eval accuracy {accuracy:.4} < floor {floor:.4} after {epochs} epochs")]
    TrainingFailure {
        model_id: String,
        accuracy: f64,
        floor: f64,
        epochs: usize,
    },

    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("reference ordering error: {0}")]
    ReferenceOrdering(String),

    #[error("incomplete table: {0}")]
    Incomplete(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
