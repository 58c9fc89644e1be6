use thiserror::Error;

/// Errors produced by the lab's numerical and combinatorial routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("data length {got} does not match {rows}x{cols}")]
    InvalidData { rows: usize, cols: usize, got: usize },
    #[error("length mismatch in {op}: {left} vs {right}")]
    LengthMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },
    #[error("group count {groups} does not divide sequence length {len}")]
    IndivisibleGroups { len: usize, groups: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("not a permutation: {0}")]
    NotAPermutation(String),
    #[error("power-law schedule needs at least two global channels, got {0}")]
    DegeneratePowerLaw(usize),
    #[error("explicit schedule has {got} steps for {channels} channels")]
    ScheduleLength { channels: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("jacobi svd did not converge after {sweeps} sweeps (off-diagonal mass {off_diagonal:e})")]
    SvdNoConvergence { sweeps: usize, off_diagonal: f64 },
    #[error("sinkhorn input must be strictly positive, found {value} at ({row}, {col})")]
    NonPositive { row: usize, col: usize, value: f64 },
    #[error("group size {0} exceeds the enumeration bound of 8; use the sorting path")]
    EnumerationTooLarge(usize),
    #[error("non-finite value produced at layer {layer}")]
    NonFinite { layer: usize },
    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },
    #[error("backward called on an empty tape or unknown node {0}")]
    BackwardBeforeForward(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
