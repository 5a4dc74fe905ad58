use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("arithmetic overflow in {0}")]
    Overflow(&'static str),

    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },

    #[error("image decode: {0}")]
    Image(#[from] crate::data::ppm::PpmError),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::model::checkpoint::CheckpointError),

    #[error("tensor file: {0}")]
    TensorFile(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown class folder {0:?}")]
    UnknownClass(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("gallery is empty")]
    EmptyGallery,

    #[error("gate did not pass; refusing to log")]
    GateNotPassed,

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io { path: path.into(), err }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
