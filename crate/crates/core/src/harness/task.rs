use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{ScratchpadMode, TaskSpec};
use super::{HarnessError, Result};
use crate::scratchpad::{
    addition_states_shift, addition_states_spaces, cumulative_parity_states, dfs_scratchpad, encode_duplicated,
    encode_flat, extract_answer, inductive_cycle_states, parity_inductive_states, AnswerRule, EncodeOptions,
    InductiveEncoding,
};
use crate::tasks::{
    addition_oracle, connectivity_oracle, gen_addition, gen_cycle, gen_half_parity, gen_mixed, gen_ood_cycle,
    gen_parity, gen_random_graph, gen_three_cycle, parity_oracle, question_bits, AdditionFormat, GraphInstance,
    OodVariant, Sample, TaskError, Tokens, Vocab, EOS,
};

/// A drawn sample with everything the trainer and evaluator need.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub sample: Sample,
    /// Question followed by the prelude.
    pub input: Tokens,
    /// The scratchpad as one flat string (empty without a scratchpad).
    pub flat_target: Tokens,
    pub use_start: bool,
    pub rule: AnswerRule,
}

pub fn vocab_for(spec: &TaskSpec) -> Vocab {
    match spec {
        TaskSpec::ThreeCycle { n } => Vocab::three_cycle(*n),
        s if s.is_graph() => Vocab::graphs(),
        _ => Vocab::characters(),
    }
}

fn rule_for(spec: &TaskSpec) -> AnswerRule {
    match spec {
        s if s.has_walk() => AnswerRule::After(";"),
        TaskSpec::Parity { .. } => AnswerRule::After(","),
        TaskSpec::HalfParity { .. } => AnswerRule::LastToken,
        TaskSpec::Addition { .. } => AnswerRule::DigitsBeforeDollar,
        _ => AnswerRule::Whole,
    }
}

fn joiner(spec: &TaskSpec) -> &'static str {
    match spec {
        TaskSpec::HalfParity { .. } => "",
        _ => ";",
    }
}

fn draw_graph(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> std::result::Result<GraphInstance, TaskError> {
    match *spec {
        TaskSpec::Cycle { n } => gen_cycle(n, None, rng),
        TaskSpec::Mixed { n_max } => gen_mixed(n_max, rng),
        TaskSpec::Uneven { total, short } => gen_ood_cycle(OodVariant::TrainUneven { total, short }, rng),
        TaskSpec::Ood { i, total } => gen_ood_cycle(OodVariant::Ood { i, total }, rng),
        TaskSpec::ThreeCycle { n } => gen_three_cycle(n, rng),
        TaskSpec::RandomGraph { nodes, edges } => gen_random_graph(nodes, edges, rng),
        _ => unreachable!("not a graph task"),
    }
}

/// Draws one example and checks it against the task oracle.
pub fn draw(spec: &TaskSpec, mode: ScratchpadMode, rng: &mut ChaCha8Rng) -> Result<Example> {
    let want_trace = mode != ScratchpadMode::None;
    let mut use_start = true;
    let mut sample = if spec.is_graph() {
        let g = draw_graph(spec, rng)?;
        if connectivity_oracle(&g) != g.label {
            return Err(HarnessError::Oracle(format!("graph label disagrees with oracle: {}", g.to_sample().question.render())));
        }
        let mut s = g.to_sample();
        if want_trace {
            if !spec.has_walk() {
                return Err(HarnessError::Config(format!("{spec} has no scratchpad")));
            }
            s.states = inductive_cycle_states(&g)?;
            debug_assert_eq!(Tokens::join(&s.states, ">"), dfs_scratchpad(&g)?);
        }
        s
    } else {
        match *spec {
            TaskSpec::Parity { min, max, d_amb } => {
                let mut s = gen_parity(rng.gen_range(min..=max), d_amb, rng)?;
                if parity_oracle(&s.question)?.to_string() != s.answer.render() {
                    return Err(HarnessError::Oracle(format!("parity mismatch on {}", s.question.render())));
                }
                if want_trace {
                    s.states = parity_inductive_states(&s.question, d_amb)?;
                }
                s
            }
            TaskSpec::HalfParity { n } => {
                let mut s = gen_half_parity(n, rng)?;
                let bits: Vec<u8> = question_bits(&s.question)?.into_iter().map(|(_, b)| b).collect();
                let half = bits[..n / 2].iter().fold(0, |a, b| a ^ b);
                if half.to_string() != s.answer.render() {
                    return Err(HarnessError::Oracle(format!("half parity mismatch on {}", s.question.render())));
                }
                if want_trace {
                    s.states = cumulative_parity_states(&bits, n / 2)?;
                }
                s
            }
            TaskSpec::Addition { format, min, max, d_amb } => {
                let (dx, dy) = (rng.gen_range(min..=max), rng.gen_range(min..=max));
                let mut s = gen_addition(dx, dy, d_amb, format, rng)?;
                if addition_oracle(&s.question)? != s.answer.render() {
                    return Err(HarnessError::Oracle(format!("addition mismatch on {}", s.question.render())));
                }
                if want_trace {
                    let (prelude, states) = match format {
                        AdditionFormat::Spaces => addition_states_spaces(&s.question, d_amb, rng)?,
                        AdditionFormat::Shift => addition_states_shift(&s.question, d_amb, rng)?,
                    };
                    s.prelude = prelude;
                    s.states = states;
                }
                use_start = format == AdditionFormat::Spaces;
                s
            }
            _ => unreachable!("graph tasks handled above"),
        }
    };
    let rule = rule_for(spec);
    let flat_target = if spec.has_walk() { Tokens::join(&sample.states, ">") } else { Tokens::join(&sample.states, joiner(spec)) };
    if want_trace {
        let last = sample.states.last().ok_or_else(|| HarnessError::Oracle("empty trace".into()))?;
        for text in [last, &flat_target] {
            if extract_answer(text, rule).as_ref() != Some(&sample.answer) {
                return Err(HarnessError::Oracle(format!(
                    "trace {:?} does not yield answer {:?}",
                    text.render(),
                    sample.answer.render()
                )));
            }
        }
    }
    let mut input = sample.question.clone();
    input.extend(&sample.prelude);
    sample.meta.insert("spec".into(), spec.to_string().into());
    Ok(Example { sample, input, flat_target, use_start, rule })
}

/// The target a model trained in `mode` must emit after `input`.
pub fn flat_target(ex: &Example, spec: &TaskSpec, mode: ScratchpadMode) -> Tokens {
    let mut t = match mode {
        ScratchpadMode::None => ex.sample.answer.clone(),
        _ => ex.flat_target.clone(),
    };
    if mode != ScratchpadMode::None || spec.fixed_answer_len().is_none() {
        t.push(EOS);
    }
    t
}

/// Training sequence for one example.
pub fn encode_example(
    vocab: &Vocab,
    ex: &Example,
    spec: &TaskSpec,
    mode: ScratchpadMode,
    loss_on_question: bool,
    max_context: usize,
) -> Result<InductiveEncoding> {
    Ok(match mode {
        ScratchpadMode::Inductive => {
            let opts = EncodeOptions { loss_on_question, use_start: ex.use_start, max_context: Some(max_context) };
            encode_duplicated(vocab, &ex.input, &ex.sample.states, &opts)?
        }
        _ => encode_flat(vocab, &ex.input, &flat_target(ex, spec, mode), loss_on_question, Some(max_context))?,
    })
}

/// Lengths observed on a probe of a distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Probe {
    /// Longest training encoding.
    pub encoded: usize,
    /// Longest context needed while decoding.
    pub decode: usize,
    pub max_states: usize,
    pub max_state_len: usize,
    pub max_flat: usize,
}

impl Probe {
    pub fn merge(self, o: Probe) -> Probe {
        Probe {
            encoded: self.encoded.max(o.encoded),
            decode: self.decode.max(o.decode),
            max_states: self.max_states.max(o.max_states),
            max_state_len: self.max_state_len.max(o.max_state_len),
            max_flat: self.max_flat.max(o.max_flat),
        }
    }
}

/// Measures sequence lengths over `n` draws.
pub fn probe(vocab: &Vocab, spec: &TaskSpec, mode: ScratchpadMode, n: usize, rng: &mut ChaCha8Rng) -> Result<Probe> {
    let mut p = Probe::default();
    for _ in 0..n {
        let ex = draw(spec, mode, rng)?;
        let enc = encode_example(vocab, &ex, spec, mode, false, usize::MAX)?;
        let flat = flat_target(&ex, spec, mode).len();
        let perm = ex.input.len() + usize::from(ex.use_start);
        let state_max = ex.sample.states.iter().map(Tokens::len).max().unwrap_or(0);
        let first = if ex.use_start { 0 } else { ex.input.len() };
        let history: usize = ex.sample.states.iter().map(|s| s.len() + 1).sum::<usize>() + first + 1;
        let decode = match mode {
            ScratchpadMode::Inductive => perm + history,
            _ => ex.input.len() + flat,
        };
        p = p.merge(Probe {
            encoded: enc.len(),
            decode,
            max_states: ex.sample.states.len(),
            max_state_len: state_max,
            max_flat: flat,
        });
    }
    Ok(p)
}
