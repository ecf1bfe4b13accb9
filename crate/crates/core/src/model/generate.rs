use super::{bind_params, logits_at, ModelConfig, ModelError, ParameterStore, Result, SeqInput};
use crate::numerics::{Scalar, Tape};

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in row.iter().enumerate() {
        if *x > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy continuation of several prefixes in lockstep. Each new token takes
/// the next position and the group of the token before it. A sequence stops
/// after emitting a stop token, after `max_new` tokens, or when its context is
/// full; stop tokens are included in the output.
pub fn generate_greedy_batch<T: Scalar>(
    params: &ParameterStore<T>,
    cfg: &ModelConfig,
    prefixes: &[SeqInput],
    stop: &[usize],
    max_new: usize,
) -> Result<Vec<Vec<usize>>> {
    Ok(run(params, cfg, prefixes, stop, max_new)?.0)
}

fn run<T: Scalar>(
    params: &ParameterStore<T>,
    cfg: &ModelConfig,
    prefixes: &[SeqInput],
    stop: &[usize],
    max_new: usize,
) -> Result<(Vec<Vec<usize>>, Vec<bool>)> {
    let mut seqs = prefixes.to_vec();
    let mut out = vec![Vec::new(); seqs.len()];
    let mut overflow = vec![false; seqs.len()];
    let mut active: Vec<usize> = (0..seqs.len()).collect();
    for _ in 0..max_new {
        active.retain(|&i| {
            let full = seqs[i].len() > cfg.max_context;
            overflow[i] |= full;
            !full
        });
        if active.is_empty() {
            break;
        }
        let batch: Vec<SeqInput> = active.iter().map(|&i| seqs[i].clone()).collect();
        let mut rows = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for s in &batch {
            offset += s.len();
            rows.push(offset - 1);
        }
        let mut tape = Tape::new();
        let pv = bind_params(&mut tape, params, cfg, false)?;
        let logits = logits_at(&mut tape, &pv, cfg, &batch, &rows, None)?;
        let logits = tape.value(logits);
        let mut still = Vec::with_capacity(active.len());
        for (r, &i) in active.iter().enumerate() {
            let tok = argmax(logits.row(r));
            out[i].push(tok);
            if !stop.contains(&tok) {
                seqs[i].push(tok)?;
                still.push(i);
            }
        }
        active = still;
    }
    Ok((out, overflow))
}

pub fn generate_greedy<T: Scalar>(
    params: &ParameterStore<T>,
    cfg: &ModelConfig,
    prefix: &SeqInput,
    stop: &[usize],
    max_new: usize,
) -> Result<Vec<usize>> {
    if prefix.len() > cfg.max_context {
        return Err(ModelError::ContextOverflow { len: prefix.len(), max: cfg.max_context });
    }
    let (mut out, overflow) = run(params, cfg, std::slice::from_ref(prefix), stop, max_new)?;
    if overflow[0] {
        return Err(ModelError::ContextOverflow { len: cfg.max_context + 1, max: cfg.max_context });
    }
    Ok(out.remove(0))
}
