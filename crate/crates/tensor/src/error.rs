use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("max_pool2 needs even spatial dims, got {height}x{width}")]
    OddDims { height: usize, width: usize },
    #[error("backward needs a scalar loss, got {numel} elements")]
    NotScalar { numel: usize },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: [usize; 4] },
    #[error("bad RMM1 data in {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TensorError::Io { path: path.into(), source }
    }
}
