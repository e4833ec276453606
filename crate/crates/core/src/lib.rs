//! Attribute-aware diversified sequential recommendation.

pub mod attribute_predictor;
pub mod checkpoint;
pub mod datasets;
pub mod diversifier;
pub mod encoder;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod trainer;
mod error;

pub use error::{AdsrError, Result};
