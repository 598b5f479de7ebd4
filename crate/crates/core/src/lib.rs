pub mod augment;
pub mod classical_seg;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod inputs;
pub mod models;
pub mod preprocess;
pub mod raster;
pub mod synthetic;
pub mod training;

pub use error::{CheckpointError, Error, Result};
