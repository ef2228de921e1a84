use std::path::PathBuf;

/// Errors produced anywhere in the framework.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape { context: String, expected: Vec<usize>, actual: Vec<usize> },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value at {location}, index {index}: {value}")]
    Numeric { location: String, index: usize, value: f64 },

    #[error("layer {index} ({kind}): {source}")]
    Layer {
        index: usize,
        kind: String,
        #[source]
        source: Box<Error>,
    },

    #[error("missing split directory: {}", .0.display())]
    MissingSplit(PathBuf),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("cannot decode image {}: {message}", .path.display())]
    Decode { path: PathBuf, message: String },

    #[error("bad image format {}: {message}", .path.display())]
    Format { path: PathBuf, message: String },

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated: {0}")]
    CheckpointTruncated(String),

    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("fixture integrity error: {0}")]
    Integrity(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape { context: context.into(), expected: expected.to_vec(), actual: actual.to_vec() }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Wraps an error with the index and kind of the layer that raised it.
    pub(crate) fn in_layer(self, index: usize, kind: impl Into<String>) -> Self {
        match self {
            e @ Error::Layer { .. } => e,
            e => Error::Layer { index, kind: kind.into(), source: Box::new(e) },
        }
    }
}
