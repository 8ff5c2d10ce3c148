//! Spatio-temporal multi-task network for fetal ultrasound video together with
//! the biometric measurement geometry, data pipeline, synthetic phantoms, and
//! training harness built around it.

pub mod data;
pub mod error;
pub mod geometry;
pub mod label;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod raster;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use label::ClassLabel;
pub use model::{FetalNet, FramePrediction, ModelParams, NetConfig};
pub use raster::Plane;
