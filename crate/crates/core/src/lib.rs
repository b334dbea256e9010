pub mod baselines;
pub mod dataset;
pub mod env;
pub mod error;
pub mod forecaster;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod raster;
pub mod solver;
pub mod trajectory;

pub use error::{Error, Result};
