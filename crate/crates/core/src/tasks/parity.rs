use rand::seq::index::sample;
use rand::Rng;
use serde_json::json;

use super::tokens::{Tokens, PLACEHOLDER};
use super::{Sample, TaskError};

fn bit_char(b: u8) -> &'static str {
    if b == 1 {
        "1"
    } else {
        "0"
    }
}

/// `n_bits` random bits scattered over `d_amb` slots (placeholders elsewhere),
/// then `=`; the answer is their parity.
pub fn gen_parity<R: Rng + ?Sized>(n_bits: usize, d_amb: usize, rng: &mut R) -> Result<Sample, TaskError> {
    if n_bits == 0 || n_bits > d_amb {
        return Err(TaskError::Invalid(format!("{n_bits} bits in {d_amb} slots")));
    }
    let mut slots = vec![PLACEHOLDER; d_amb];
    let mut parity = 0u8;
    let mut at = sample(rng, d_amb, n_bits).into_vec();
    at.sort_unstable();
    for p in at {
        let b = u8::from(rng.gen_bool(0.5));
        parity ^= b;
        slots[p] = bit_char(b);
    }
    let mut question = Tokens(slots.into_iter().map(String::from).collect());
    question.push("=");
    let mut meta = serde_json::Map::new();
    meta.insert("n_bits".into(), json!(n_bits));
    meta.insert("d_amb".into(), json!(d_amb));
    Ok(Sample {
        task: "parity".into(),
        question,
        prelude: Tokens::new(),
        states: Vec::new(),
        answer: Tokens::chars(bit_char(parity)),
        meta,
    })
}

/// `n` random bits then `=`; the answer is the parity of the first `n/2`.
pub fn gen_half_parity<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Sample, TaskError> {
    if n < 2 || n % 2 != 0 {
        return Err(TaskError::Invalid(format!("half parity needs an even n >= 2, got {n}")));
    }
    let bits: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
    let parity = bits[..n / 2].iter().fold(0, |a, b| a ^ b);
    let mut question = Tokens(bits.iter().map(|&b| bit_char(b).to_string()).collect());
    question.push("=");
    let mut meta = serde_json::Map::new();
    meta.insert("n".into(), json!(n));
    Ok(Sample {
        task: "half_parity".into(),
        question,
        prelude: Tokens::new(),
        states: Vec::new(),
        answer: Tokens::chars(bit_char(parity)),
        meta,
    })
}

/// Bits of a parity-style question (placeholders skipped, `=` required last).
pub fn question_bits(question: &Tokens) -> Result<Vec<(usize, u8)>, TaskError> {
    let toks: Vec<&str> = question.iter().collect();
    let Some((&"=", body)) = toks.split_last() else {
        return Err(TaskError::Malformed(format!("parity question {:?} lacks '='", question.render())));
    };
    body.iter()
        .enumerate()
        .filter(|(_, &t)| t != PLACEHOLDER)
        .map(|(i, &t)| match t {
            "0" => Ok((i, 0)),
            "1" => Ok((i, 1)),
            other => Err(TaskError::Malformed(format!("unexpected token {other:?} in parity question"))),
        })
        .collect()
}

/// Parity oracle: XOR of every bit in the question.
pub fn parity_oracle(question: &Tokens) -> Result<u8, TaskError> {
    Ok(question_bits(question)?.iter().fold(0, |a, &(_, b)| a ^ b))
}
