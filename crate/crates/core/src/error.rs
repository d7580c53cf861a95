use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed run-length encoding: {0}")]
    MalformedEncoding(String),

    #[error("region is empty")]
    EmptyRegion,

    #[error("IoU is undefined: both boxes have zero area")]
    UndefinedIou,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("token id {id} is outside the vocabulary of size {size}")]
    Vocab { id: usize, size: usize },

    #[error("every target position is padding")]
    EmptyTarget,

    #[error("instruction template error: {0}")]
    Template(String),

    #[error("{}:{line}: {message}", path.as_deref().unwrap_or("<input>"))]
    Ingestion {
        path: Option<String>,
        line: usize,
        message: String,
    },

    #[error("training diverged at step {step}: loss is {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("nothing to evaluate")]
    EmptyEval,

    #[error("prediction/gold length mismatch: {pred} vs {gold}")]
    Alignment { pred: usize, gold: usize },

    #[error("unparseable verdict: {0:?}")]
    UnparseableVerdict(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
