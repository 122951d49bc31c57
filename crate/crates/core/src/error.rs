use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {context} at input {input:?}")]
    NonFinite {
        context: &'static str,
        input: Vec<f64>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid usage: {0}")]
    Usage(String),
    #[error("trajectory {index} blew up at step {step}")]
    Generation { index: usize, step: usize },
    #[error("rollout blew up; last finite sample index {last_finite}")]
    Rollout { last_finite: usize },
    #[error("training diverged in epoch {epoch} at step {step}: non-finite loss or gradient")]
    Diverged { epoch: usize, step: usize },
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn non_finite(context: &'static str, input: &[f64]) -> Self {
        Error::NonFinite {
            context,
            input: input.to_vec(),
        }
    }
}
