use cxa_datagen::error::DataError;
use cxa_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid modality set `{input}`: {reason} (valid tokens: y, c, b, p, s, d)")]
    InvalidModalities { input: String, reason: String },
    #[error("input for modality {modality}: {detail}")]
    ModalityInput { modality: String, detail: String },
    #[error("model expects modalities {expected} but the dataset provides {found}")]
    ModalityMismatch { expected: String, found: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found}, this build reads version {supported}")]
    VersionMismatch { found: u8, supported: u8 },
    #[error("checkpoint truncated: {0}")]
    TruncatedCheckpoint(String),
    #[error("corrupt checkpoint header: {0}")]
    CorruptHeader(String),
    #[error("parameter `{name}` has shape {found:?}, the model expects {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{0}")]
    Evaluation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
