use std::path::{Path, PathBuf};

use radiomotion_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("environment generation failed: {0}")]
    Generation(String),
    #[error("invalid raster: {0}")]
    Raster(String),
    #[error("cell ({row}, {col}) is outside the {size}x{size} grid")]
    OutOfBounds { row: i64, col: i64, size: usize },
    #[error("coordinate {value} is outside (0, {size}]")]
    Coordinate { value: f64, size: usize },
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("model is not trained")]
    Untrained,
    #[error("config error: {0}")]
    Config(String),
    #[error("refusing to overwrite existing {0} (use --force)")]
    Exists(PathBuf),
    #[error("png error on {path}: {reason}")]
    Png { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed on env {env} traj {traj} tx {tx}: {source}")]
    Scenario {
        env: usize,
        traj: usize,
        tx: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
