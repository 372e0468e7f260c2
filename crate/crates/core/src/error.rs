//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },

    #[error("parameter index {index} is already owned by task {owner}")]
    OwnershipViolation { index: usize, owner: u16 },

    #[error("task id {got} out of sequence: next committable task is {expected}")]
    TaskOrder { expected: u16, got: u16 },

    #[error("unknown task {0}")]
    UnknownTask(u16),

    #[error("accuracy goal {goal} not met: achieved {achieved}")]
    GoalNotMet { goal: f32, achieved: f32 },

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
