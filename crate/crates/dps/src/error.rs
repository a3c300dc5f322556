use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum DpsError {
    #[error("input error: {0}")]
    Input(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint magic mismatch: expected \"DPSM\", found {found:?}")]
    MagicMismatch { found: [u8; 4] },

    #[error("unsupported checkpoint format version {0}")]
    VersionMismatch(u32),

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("tensor {name}: header shape {header:?} inconsistent with config shape {expected:?}")]
    ShapeMismatch {
        name: String,
        header: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("training diverged: non-finite loss at step {step}")]
    TrainingDiverged { step: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DpsError>;
