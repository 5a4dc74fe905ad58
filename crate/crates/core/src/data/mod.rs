//! Dataset layout, PPM decoding, resizing and augmentation.

pub mod augment;
pub mod class;
pub mod dataset;
pub mod ppm;
pub mod resize;
pub mod synthetic;

pub use augment::{augment, expand_dataset, flip_horizontal, AugmentSpec, FillMode};
pub use class::OcclusionClass;
pub use dataset::{load_dataset, Dataset, LabeledImage, DEFAULT_IMAGE_SIZE};
pub use ppm::decode_resize;
