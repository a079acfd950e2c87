use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("patch id {0} out of range (expected < 128)")]
    PatchOutOfRange(usize),
    #[error("block ({col}, {row}) outside the 16x8 grid")]
    BlockOutOfRange { col: usize, row: usize },
    #[error("block size {0} must be even and at least 2")]
    InvalidBlockSize(usize),
    #[error("shape mismatch: expected {expected_h}x{expected_w}, got {got_h}x{got_w}")]
    ShapeMismatch {
        expected_h: usize,
        expected_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("scale {h}x{w} does not evenly divide {full_h}x{full_w}")]
    NonDividingScale {
        h: usize,
        w: usize,
        full_h: usize,
        full_w: usize,
    },
    #[error("every patch has already been visited")]
    AllVisited,
    #[error("policy {0} needs {1}")]
    MissingContext(&'static str, &'static str),
}
