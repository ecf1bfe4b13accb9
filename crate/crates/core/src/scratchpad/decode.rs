use crate::model::{generate_greedy_batch, ModelConfig, ParameterStore, SeqInput};
use crate::numerics::Scalar;
use crate::tasks::{Tokens, Vocab, STATE_SEP};

use super::ScratchpadError;

/// How the final answer is read off the last state (or a flat output).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnswerRule {
    /// Tokens after the last occurrence of the given token (`;` or `,`).
    After(&'static str),
    /// The run of digits immediately left of the last `$`.
    DigitsBeforeDollar,
    /// The final token.
    LastToken,
    /// The whole string.
    Whole,
}

pub fn extract_answer(text: &Tokens, rule: AnswerRule) -> Option<Tokens> {
    let toks = &text.0;
    let out: Vec<String> = match rule {
        AnswerRule::After(sep) => {
            let i = toks.iter().rposition(|t| t == sep)?;
            toks[i + 1..].to_vec()
        }
        AnswerRule::DigitsBeforeDollar => {
            let d = toks.iter().rposition(|t| t == "$")?;
            let start = toks[..d].iter().rposition(|t| !(t.len() == 1 && t.as_bytes()[0].is_ascii_digit())).map_or(0, |i| i + 1);
            toks[start..d].to_vec()
        }
        AnswerRule::LastToken => vec![toks.last()?.clone()],
        AnswerRule::Whole => toks.clone(),
    };
    (!out.is_empty()).then_some(Tokens(out))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeLimits {
    pub max_states: usize,
    pub max_state_len: usize,
}

/// Context presented to the model when generating each new state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Full history; older states are hidden by group masking.
    Masked,
    /// Only the permanent prefix and the previous state are present.
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub states: Vec<Tokens>,
    /// `None` on decode failure.
    pub answer: Option<Tokens>,
    pub failure: Option<String>,
}

/// Ids of the permanent prefix and of any states already known.
struct Job {
    permanent: Vec<usize>,
    states: Vec<Vec<usize>>,
    done: Option<Result<(), String>>,
}

fn context(job: &Job, mode: DecodeMode, sep: usize) -> SeqInput {
    let t = job.permanent.len();
    let mut tokens = job.permanent.clone();
    let mut positions: Vec<usize> = (0..t).collect();
    let mut groups = vec![0; t];
    let from = match mode {
        DecodeMode::Masked => 0,
        DecodeMode::Truncated => job.states.len().saturating_sub(1),
    };
    for (g, s) in job.states.iter().enumerate().skip(from) {
        for (off, &id) in s.iter().chain([sep].iter()).enumerate() {
            tokens.push(id);
            positions.push(t + off);
            groups.push(g + 1);
        }
    }
    SeqInput::grouped(tokens, positions, groups)
}

/// Generates states until `<EOS>`, each from the permanent prefix and the
/// previous state only. Runs all questions in lockstep.
///
/// `questions` already include any prelude. With `use_start` the question is
/// closed by `<START>` and becomes permanent memory; otherwise it is the
/// first state.
#[allow(clippy::too_many_arguments)]
pub fn inductive_decode_batch<T: Scalar>(
    params: &ParameterStore<T>,
    cfg: &ModelConfig,
    vocab: &Vocab,
    questions: &[Tokens],
    use_start: bool,
    limits: DecodeLimits,
    rule: AnswerRule,
    mode: DecodeMode,
) -> Result<Vec<DecodeOutcome>, ScratchpadError> {
    let greedy = |prefixes: &[SeqInput], stop: &[usize], max_new: usize| {
        generate_greedy_batch(params, cfg, prefixes, stop, max_new).map_err(ScratchpadError::from)
    };
    inductive_decode_with(greedy, vocab, questions, use_start, limits, rule, mode)
}

/// The inductive decoding loop with a pluggable state generator. `step`
/// receives one context per unfinished question, the stop ids and a token
/// budget, and returns each continuation (ending in a stop id if one was hit).
pub fn inductive_decode_with(
    mut step: impl FnMut(&[SeqInput], &[usize], usize) -> Result<Vec<Vec<usize>>, ScratchpadError>,
    vocab: &Vocab,
    questions: &[Tokens],
    use_start: bool,
    limits: DecodeLimits,
    rule: AnswerRule,
    mode: DecodeMode,
) -> Result<Vec<DecodeOutcome>, ScratchpadError> {
    let sep = vocab.id(STATE_SEP).expect("separator in vocabulary");
    let eos = vocab.eos();
    let mut jobs = questions
        .iter()
        .map(|q| {
            let ids = vocab.encode(q)?;
            Ok(if use_start {
                let mut permanent = ids;
                permanent.push(vocab.start());
                Job { permanent, states: Vec::new(), done: None }
            } else {
                Job { permanent: Vec::new(), states: vec![ids], done: None }
            })
        })
        .collect::<Result<Vec<_>, ScratchpadError>>()?;
    let skip = usize::from(!use_start);
    loop {
        let active: Vec<usize> = (0..jobs.len()).filter(|&i| jobs[i].done.is_none()).collect();
        if active.is_empty() {
            break;
        }
        for &i in &active {
            if jobs[i].states.len() - skip >= limits.max_states {
                jobs[i].done = Some(Err(format!("no <EOS> within {} states", limits.max_states)));
            }
        }
        let active: Vec<usize> = active.into_iter().filter(|&i| jobs[i].done.is_none()).collect();
        if active.is_empty() {
            break;
        }
        let prefixes: Vec<SeqInput> = active.iter().map(|&i| context(&jobs[i], mode, sep)).collect();
        let outs = step(&prefixes, &[sep, eos], limits.max_state_len + 1)?;
        for (&i, mut out) in active.iter().zip(outs) {
            let job = &mut jobs[i];
            match out.last().copied() {
                Some(end) if end == sep || end == eos => {
                    out.pop();
                    if out.is_empty() {
                        job.done = Some(Err("empty state".into()));
                        continue;
                    }
                    job.states.push(out);
                    if end == eos {
                        job.done = Some(Ok(()));
                    }
                }
                _ => job.done = Some(Err("state too long or context exhausted".into())),
            }
        }
    }
    jobs.into_iter()
        .map(|job| {
            let states = job.states[skip..].iter().map(|s| vocab.decode(s)).collect::<Result<Vec<_>, _>>()?;
            let (answer, failure) = match job.done.expect("all jobs finished") {
                Ok(()) => match states.last().and_then(|s| extract_answer(s, rule)) {
                    Some(a) => (Some(a), None),
                    None => (None, Some("answer not found in final state".into())),
                },
                Err(e) => (None, Some(e)),
            };
            Ok(DecodeOutcome { states, answer, failure })
        })
        .collect()
}

pub fn inductive_decode<T: Scalar>(
    params: &ParameterStore<T>,
    cfg: &ModelConfig,
    vocab: &Vocab,
    question: &Tokens,
    use_start: bool,
    limits: DecodeLimits,
    rule: AnswerRule,
    mode: DecodeMode,
) -> Result<DecodeOutcome, ScratchpadError> {
    Ok(inductive_decode_batch(params, cfg, vocab, std::slice::from_ref(question), use_start, limits, rule, mode)?.remove(0))
}

/// Greedy causal continuation of `question` until `<EOS>` or `max_new`
/// tokens; the answer is read from the whole output. With `require_eos` an
/// output cut off by `max_new` is a decode failure.
pub fn flat_decode_batch<T: Scalar>(
    params: &ParameterStore<T>,
    cfg: &ModelConfig,
    vocab: &Vocab,
    questions: &[Tokens],
    max_new: usize,
    require_eos: bool,
    rule: AnswerRule,
) -> Result<Vec<DecodeOutcome>, ScratchpadError> {
    let prefixes = questions.iter().map(|q| Ok(SeqInput::causal(vocab.encode(q)?))).collect::<Result<Vec<_>, ScratchpadError>>()?;
    let outs = generate_greedy_batch(params, cfg, &prefixes, &[vocab.eos()], max_new)?;
    outs.into_iter()
        .map(|mut out| {
            let closed = out.last() == Some(&vocab.eos());
            if closed {
                out.pop();
            }
            let text = vocab.decode(&out)?;
            let answer = if closed || !require_eos { extract_answer(&text, rule) } else { None };
            let failure = answer.is_none().then(|| "no answer produced".to_string());
            Ok(DecodeOutcome { states: vec![text], answer, failure })
        })
        .collect()
}
