//! Synthetic task generators, canonical serializations and independent
//! oracles.
//!
//! Generators take an explicit RNG and are pure functions of their
//! arguments and its state.

mod addition;
mod graph;
mod parity;
mod tokens;
mod vocab;

pub use addition::{
    add_decimal, addition_operands, addition_oracle, addition_question, gen_addition, random_digits, AdditionFormat,
    BUFFER_FILLER, OPERAND_FILLER,
};
pub(crate) use addition::filler;
pub use graph::{
    connectivity_oracle, degree_shortcut, distance_oracle, gen_cycle, gen_mixed, gen_ood_cycle, gen_random_graph,
    gen_random_graph_with, NegativePairs,
    gen_three_cycle, parse_graph, serialize_graph, weak_components, GraphInstance, GraphKind, GraphMeta, OodVariant,
};
pub use parity::{gen_half_parity, gen_parity, parity_oracle, question_bits};
pub use tokens::{tokenize_graph, Tokens, EOS, PLACEHOLDER, START, STATE_SEP};
pub use vocab::{node_name, Vocab, CHARSET, NODE_POOL};

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("invalid task parameters: {0}")]
    Invalid(String),
    #[error("need {need} node names but the pool has {have}")]
    Pool { need: usize, have: usize },
    #[error("no suitable graph after {0} attempts")]
    RetryExhausted(usize),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
}

/// A question with its reasoning trace and answer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sample {
    pub task: String,
    pub question: Tokens,
    /// Scratch material placed after the question (e.g. a random answer
    /// buffer); supplied by the harness at evaluation time.
    #[serde(skip_serializing_if = "Tokens::is_empty")]
    pub prelude: Tokens,
    pub states: Vec<Tokens>,
    pub answer: Tokens,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl Sample {
    /// One JSON-lines record with rendered strings.
    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::json!({
            "task": self.task,
            "question": self.question.render(),
            "answer": self.answer.render(),
            "meta": self.meta,
        });
        if !self.states.is_empty() {
            obj["states"] = self.states.iter().map(Tokens::render).collect();
        }
        if !self.prelude.is_empty() {
            obj["prelude"] = self.prelude.render().into();
        }
        obj
    }
}
