use thiserror::Error;

use crate::Shape4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("reflection pad {pad} must be smaller than spatial dims {height}x{width}")]
    Pad { pad: usize, height: usize, width: usize },
    #[error("non-finite gradient for parameter `{param}`")]
    NanGradient { param: String },
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
}

impl NnError {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: Shape4) -> Self {
        NnError::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
