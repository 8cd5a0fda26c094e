use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// The propagation direction is aligned with the local z axis, where
    /// the factored polarization gain divides by zero.
    #[error("propagation direction at the local pole (|cos theta| = {cos_theta:e})")]
    PoleSingularity { cos_theta: f64 },

    /// An entry of `b + step * dir` vanished, so it cannot be normalized.
    #[error("retraction degenerate at entry {index}")]
    RetractionDegenerate { index: usize },

    #[error("invalid configuration `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
