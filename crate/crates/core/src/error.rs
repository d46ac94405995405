use std::io;

use thiserror::Error;

pub type Result<T, E = MfmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MfmError {
    #[error("dimension violation: {0}")]
    Dimension(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("task {task} cannot be built for this clip: {reason}")]
    TaskMismatch { task: String, reason: String },

    #[error("task {0} requires a non-empty prompt")]
    EmptyPrompt(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("non-finite state at sampler step {step}")]
    NonFiniteSampler { step: usize },

    #[error("non-finite loss at training step {step} (task {task})")]
    NonFiniteLoss { step: usize, task: String },

    #[error("empty qualified task set")]
    EmptyTaskSet,

    #[error("insufficient clips: need {needed}, have {available} (short by {})", needed - available)]
    InsufficientClips { needed: usize, available: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl MfmError {
    pub fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        MfmError::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code: 2 for validation problems, 3 for numeric aborts.
    pub fn exit_code(&self) -> i32 {
        match self {
            MfmError::NonFinite { .. }
            | MfmError::NonFiniteSampler { .. }
            | MfmError::NonFiniteLoss { .. } => 3,
            _ => 2,
        }
    }
}
