use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("quaternion norm {norm} is not 1")]
    NonUnitQuaternion { norm: f64 },
    #[error("empty pose sequence")]
    EmptySequence,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("agents {a} and {b} overlap at spawn (distance {distance:.3} m)")]
    OverlappingAgents { a: usize, b: usize, distance: f64 },
    #[error("could not place {what} after {attempts} attempts")]
    SpawnFailed { what: String, attempts: usize },
    #[error("episode has {frames} frames, a window needs {needed}")]
    EpisodeTooShort { frames: usize, needed: usize },
    #[error("unknown {kind} mode `{value}`")]
    UnknownMode { kind: &'static str, value: String },
    #[error("record {index}: {detail}")]
    DimensionMismatch { index: usize, detail: String },
    #[error("dataset truncated: {0}")]
    Truncated(String),
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
