use std::path::PathBuf;

use crate::gateway::GatewayError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("missing tensor `{0}` in weight container")]
    MissingTensor(String),

    #[error("shape mismatch for `{name}`: expected {expected:?}, found {actual:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("unsupported dtype {dtype} for tensor `{name}`")]
    UnsupportedDtype { name: String, dtype: String },

    #[error("invalid weight container: {0}")]
    Container(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("empty input sequence")]
    EmptyInput,

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("sequence of length {len} exceeds context limit {limit}")]
    SequenceTooLong { len: usize, limit: usize },

    #[error("dimension mismatch: expected {expected}, found {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("hook site {0} is not available in this model")]
    UnknownSite(String),

    #[error("feature {0} is not in the index")]
    FeatureNotIndexed(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("calibration failed for target KL {target}: max achieved KL {achieved_max} with |m| <= {cap}")]
    CalibrationFailed {
        target: f64,
        achieved_max: f64,
        cap: f64,
    },

    #[error("could not parse LLM output after {attempts} attempts: {detail}")]
    Parse { attempts: usize, detail: String },

    #[error("tokenization failed: {0}")]
    Tokenize(String),

    #[error("{0}")]
    Usage(String),

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error(transparent)]
    Gateway(#[from] GatewayError),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
