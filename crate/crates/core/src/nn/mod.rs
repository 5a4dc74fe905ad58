//! MobileNetV2 building blocks.

pub mod block;
pub mod conv;
pub mod cost;
pub mod norm;
pub mod pool;

pub use block::{inverted_residual, ConvBlockParams, ConvKind, ConvStage};
pub use conv::{conv2d, depthwise_conv, pointwise_conv, Padding};
pub use cost::{conv_cost, depletion_ratio, ConvCostInput};
pub use norm::{batch_norm, BatchNorm, Mode};
pub use pool::global_average_pool;
