use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the tensor-train algebra, operator assembly and filters.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("expected {expected} entries, got {found}")]
    EntryCount { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dense size {size} exceeds materialization limit {limit}")]
    SizeLimit { size: usize, limit: usize },
    #[error("mode size {size} at position {mode} is not a power of two")]
    NotPowerOfTwo { mode: usize, size: usize },
    #[error("invalid rounding policy: {0}")]
    InvalidPolicy(&'static str),
    #[error("rank cap {cap} exceeded (needed {needed})")]
    RankCap { needed: usize, cap: usize },
    #[error("density has no positive mass")]
    ZeroMass,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid observations: {0}")]
    InvalidObservations(String),
    #[error("numerical instability: {0}")]
    Unstable(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
