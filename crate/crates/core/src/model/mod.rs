//! Decoder-only transformer: configuration, parameters, forward pass,
//! greedy generation and checkpoints.

mod checkpoint;
mod config;
mod forward;
mod generate;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC};
pub use config::ModelConfig;
pub use forward::{bind_params, forward, forward_logits, logits_at, sequence_loss, ParamVars, SeqInput, TrainSeq, Visibility};
pub use generate::{generate_greedy, generate_greedy_batch};
pub use params::{init_model, ParameterStore};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{what} {index} out of range (< {bound})")]
    Index { what: &'static str, index: usize, bound: usize },
    #[error("sequence of length {len} exceeds context {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("attention mask row {row} has no visible entry")]
    MaskFullyHidden { row: usize },
    #[error("attention mask lets row {row} see later position {col}")]
    MaskNotCausal { row: usize, col: usize },
    #[error("malformed input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
