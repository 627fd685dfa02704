use thiserror::Error;

use hlpnn_tensor::TensorError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Ingest { line: usize, message: String },
    #[error("{what} out of range: {value}")]
    Range { what: &'static str, value: f64 },
    #[error("config: {0}")]
    Config(String),
    #[error("registry: {0}")]
    Registry(String),
    #[error("graph: {0}")]
    Graph(String),
    #[error("generation: {0}")]
    Generation(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Lets model code run inside tensor-level utilities such as gradient checks.
impl From<Error> for TensorError {
    fn from(e: Error) -> Self {
        match e {
            Error::Tensor(t) => t,
            other => TensorError::InvalidArgument(other.to_string()),
        }
    }
}
