use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: {message}")]
    LayerShape { layer: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("loss is not finite: {0}")]
    NonFiniteLoss(f64),

    #[error("vector {index} has zero norm; cosine similarity is undefined")]
    ZeroNorm { index: usize },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error(
        "embedding for window {window} (participant {participant}) contains non-finite values"
    )]
    NonFiniteEmbedding { window: usize, participant: String },

    #[error("training labels contain a single class ({class}); at least two are required")]
    SingleClass { class: usize },

    #[error("input value {value} at index {index} lies outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("missing {what}: {path} (run `{hint}` first)")]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        hint: &'static str,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Whether the failure stems from the invocation (bad configuration or a
    /// missing upstream artifact) rather than from running it.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::MissingArtifact { .. })
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
