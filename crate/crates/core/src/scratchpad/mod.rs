//! Educated and inductive scratchpads: state builders, the two training
//! encodings of an inductive trace, and induction-preserving decoding.

mod builders;
mod decode;
mod encode;

pub use builders::{
    addition_states_shift, addition_states_shift_with_buffer, addition_states_spaces, addition_states_spaces_with_buffer,
    cumulative_parity_states, dfs_scratchpad, inductive_cycle_states, parity_inductive_states,
};
pub use decode::{
    extract_answer, flat_decode_batch, inductive_decode, inductive_decode_batch, inductive_decode_with, AnswerRule, DecodeLimits, DecodeMode,
    DecodeOutcome,
};
pub use encode::{encode_duplicated, encode_flat, encode_split, EncodeOptions, InductiveEncoding, SplitSequence};

/// The reserved tokens, re-exported for convenience.
pub use crate::tasks::{EOS, PLACEHOLDER, START, STATE_SEP};

use std::io::Write;

use thiserror::Error;

use crate::model::ModelError;
use crate::tasks::TaskError;

#[derive(Debug, Error)]
pub enum ScratchpadError {
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("reserved token {token:?} inside a {context}")]
    Reserved { token: String, context: &'static str },
    #[error("encoded length {len} exceeds context {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Writes encodings as JSON lines `{tokens, loss_mask, group, positions}`.
pub fn write_encodings_jsonl<W: Write>(mut w: W, encodings: &[InductiveEncoding]) -> Result<(), ScratchpadError> {
    for e in encodings {
        serde_json::to_writer(&mut w, e).map_err(|err| ScratchpadError::Io(err.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
