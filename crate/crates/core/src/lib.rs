//! Occluded-face classification and re-identification on a small CPU tensor
//! library: MobileNetV2 feature extraction, a GRU sequence head, metrics, and
//! a gallery-based identification pipeline.

pub mod data;
pub mod error;
pub mod gru;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod reid;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
