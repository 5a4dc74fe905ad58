//! The fused MobileNetV2 + GRU classifier, its training loop and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, CheckpointError};
pub use config::{BlockSpec, NetworkConfig, OptimizerKind, Profile, ScheduleKind, TrainConfig};
pub use network::{build_network, Inference, Model, Params, Role};
pub use train::{evaluate, train, train_with, EpochRecord, History};
