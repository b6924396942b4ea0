use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("shape mismatch at layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },

    #[error("incompatible weights: {0}")]
    IncompatibleWeights(String),

    #[error("backward called before a caching forward pass")]
    MissingForward,

    #[error("non-finite loss at epoch {epoch}, batch {batch} (loss = {loss})")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn decode(msg: impl Into<String>) -> Self {
        Error::Decode(msg.into())
    }
}
