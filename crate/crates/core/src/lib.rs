//! Spatial prediction of daily PM2.5 from monitors and gridded model output.

pub mod dataset;
pub mod downscaler;
pub mod error;
pub mod eval;
pub mod forest;
pub mod geo;
pub mod geostat;
pub mod idw;
pub mod ingest;
pub mod linalg;
pub mod optimize;
pub mod prediction;
pub mod raster;
pub mod regression;
pub mod seed;

pub use error::{Error, Result};
pub use prediction::Prediction;
