use std::collections::HashMap;

use super::tokens::{Tokens, EOS, START};
use super::TaskError;

/// Every single-character token any task emits.
pub const CHARSET: &str = "0123456789abcdefghijklmnopqrstuvwxyz_>;?+=$[],|-#";

/// Size of the `v0..v999` node-name pool.
pub const NODE_POOL: usize = 1000;

pub fn node_name(i: usize) -> String {
    format!("v{i}")
}

/// Bijection between tokens and ids. `<START>` is 0 and `<EOS>` is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, TaskError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(TaskError::Invalid(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    fn base() -> Vec<String> {
        let mut v = vec![START.to_string(), EOS.to_string()];
        v.extend(CHARSET.chars().map(String::from));
        v
    }

    /// Specials and characters only.
    pub fn characters() -> Self {
        Self::from_tokens(Self::base()).expect("distinct")
    }

    /// Characters plus the node-name pool.
    pub fn graphs() -> Self {
        let mut v = Self::base();
        v.extend((0..NODE_POOL).map(node_name));
        Self::from_tokens(v).expect("distinct")
    }

    /// Characters plus `a_i`, `b_i`, `c_i` for `i < n`.
    pub fn three_cycle(n: usize) -> Self {
        let mut v = Self::base();
        for i in 0..n {
            for l in ["a", "b", "c"] {
                v.push(format!("{l}_{i}"));
            }
        }
        Self::from_tokens(v).expect("distinct")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, tok: &str) -> Option<usize> {
        self.index.get(tok).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn start(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        1
    }

    pub fn encode(&self, toks: &Tokens) -> Result<Vec<usize>, TaskError> {
        toks.iter().map(|t| self.id(t).ok_or_else(|| TaskError::UnknownToken(t.to_string()))).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Tokens, TaskError> {
        ids.iter()
            .map(|&i| self.token(i).map(String::from).ok_or_else(|| TaskError::UnknownToken(format!("id {i}"))))
            .collect::<Result<Vec<_>, _>>()
            .map(Tokens)
    }
}
