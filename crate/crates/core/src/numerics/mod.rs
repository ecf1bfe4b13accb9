//! Dense tensors with a reverse-mode tape.
//!
//! Everything here is generic over [`Scalar`] so the same model code runs in
//! 32-bit for training and in 64-bit for finite-difference checks.

mod gradcheck;
mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{central_difference, finite_diff_check, GradCheckReport};
pub use kernels::{gelu, gelu_grad, softmax_in_place};
pub use scalar::Scalar;
pub use tape::{AttentionLayout, Gradients, Reduction, Segment, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Additive mask value marking a hidden attention/softmax entry.
///
/// Entries at or below [`HIDDEN_THRESHOLD`] are treated as hidden and produce
/// an exact zero probability.
pub const HIDDEN: f64 = -1e9;
pub const HIDDEN_THRESHOLD: f64 = -1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("row {row} of {op} has no visible entries")]
    FullyMasked { op: &'static str, row: usize },
    #[error("invalid mask value {value} in {op} (expected 0 or hidden sentinel)")]
    BadMask { op: &'static str, value: f64 },
    #[error("index {index} out of range {bound} in {op}")]
    Index { op: &'static str, index: usize, bound: usize },
    #[error("loss mask selects no positions")]
    EmptyLossMask,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, NumericsError>;
