use serde::Serialize;

use crate::model::{SeqInput, TrainSeq};
use crate::tasks::{Tokens, Vocab, EOS, START, STATE_SEP};

use super::ScratchpadError;

/// Token ids with per-token loss flags, attention groups and positions.
///
/// `loss_mask[i]` marks token `i` as a prediction target (predicted from
/// row `i - 1`). Group 0 is permanent memory; every other group sees only
/// itself and group 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct InductiveEncoding {
    pub tokens: Vec<usize>,
    #[serde(serialize_with = "bits")]
    pub loss_mask: Vec<bool>,
    pub group: Vec<usize>,
    pub positions: Vec<usize>,
}

fn bits<S: serde::Serializer>(mask: &[bool], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(mask.iter().map(|&b| u8::from(b)))
}

impl InductiveEncoding {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn visible(&self, i: usize, j: usize) -> bool {
        j <= i && (self.group[j] == 0 || self.group[j] == self.group[i])
    }

    /// Number of tokens that actually receive loss (the first token has no
    /// predecessor and never does).
    pub fn target_count(&self) -> usize {
        self.loss_mask.iter().skip(1).filter(|&&m| m).count()
    }

    /// Next-token training form: row `i` reads token `i` and predicts `i + 1`.
    pub fn to_train_seq(&self) -> TrainSeq {
        let t = self.len() - 1;
        TrainSeq {
            input: SeqInput::grouped(self.tokens[..t].to_vec(), self.positions[..t].to_vec(), self.group[..t].to_vec()),
            targets: self.tokens[1..].to_vec(),
            loss_mask: self.loss_mask[1..].to_vec(),
        }
    }
}

/// One causal training sequence of the split encoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SplitSequence {
    pub tokens: Vec<usize>,
    #[serde(serialize_with = "bits")]
    pub loss_mask: Vec<bool>,
}

impl SplitSequence {
    pub fn target_count(&self) -> usize {
        self.loss_mask.iter().skip(1).filter(|&&m| m).count()
    }

    pub fn to_train_seq(&self) -> TrainSeq {
        let t = self.tokens.len() - 1;
        TrainSeq {
            input: SeqInput::causal(self.tokens[..t].to_vec()),
            targets: self.tokens[1..].to_vec(),
            loss_mask: self.loss_mask[1..].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodeOptions {
    /// Train on the question tokens too.
    pub loss_on_question: bool,
    /// Close the question with `<START>`. Without it the question is itself
    /// the first state and is forgotten by later states.
    pub use_start: bool,
    pub max_context: Option<usize>,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self { loss_on_question: true, use_start: true, max_context: None }
    }
}

const RESERVED: [&str; 3] = [START, EOS, STATE_SEP];

fn check_payload(question: &Tokens, states: &[Tokens]) -> Result<(), ScratchpadError> {
    if states.is_empty() {
        return Err(ScratchpadError::Malformed("no states".into()));
    }
    for (what, t) in std::iter::once(("question", question)).chain(states.iter().map(|s| ("state", s))) {
        if let Some(r) = RESERVED.iter().find(|r| t.contains(r)) {
            return Err(ScratchpadError::Reserved { token: (*r).to_string(), context: what });
        }
    }
    if let Some(i) = states.iter().position(Tokens::is_empty) {
        return Err(ScratchpadError::Malformed(format!("state {i} is empty")));
    }
    Ok(())
}

/// Permanent prefix, its loss flag, the state list actually induced over,
/// and the loss flag of the first state.
struct Plan {
    permanent: Vec<usize>,
    permanent_loss: bool,
    states: Vec<Vec<usize>>,
    first_loss: bool,
}

fn plan(vocab: &Vocab, question: &Tokens, states: &[Tokens], opts: &EncodeOptions) -> Result<Plan, ScratchpadError> {
    check_payload(question, states)?;
    let q = vocab.encode(question)?;
    let mut ids = states.iter().map(|s| vocab.encode(s)).collect::<Result<Vec<_>, _>>()?;
    Ok(if opts.use_start {
        let mut permanent = q;
        permanent.push(vocab.start());
        Plan { permanent, permanent_loss: opts.loss_on_question, states: ids, first_loss: true }
    } else {
        ids.insert(0, q);
        Plan { permanent: Vec::new(), permanent_loss: false, states: ids, first_loss: opts.loss_on_question }
    })
}

fn check_len(len: usize, opts: &EncodeOptions) -> Result<(), ScratchpadError> {
    match opts.max_context {
        Some(max) if len > max => Err(ScratchpadError::ContextOverflow { len, max }),
        _ => Ok(()),
    }
}

/// Every state is duplicated into the group of its successor, so a single
/// sequence carries all induction steps (groups `0, 1, ..., k`).
pub fn encode_duplicated(
    vocab: &Vocab,
    question: &Tokens,
    states: &[Tokens],
    opts: &EncodeOptions,
) -> Result<InductiveEncoding, ScratchpadError> {
    let p = plan(vocab, question, states, opts)?;
    let t = p.permanent.len();
    let k = p.states.len();
    let (sep, eos) = (vocab.id(STATE_SEP).expect("separator in vocabulary"), vocab.eos());
    let mut enc = InductiveEncoding {
        tokens: p.permanent.clone(),
        loss_mask: vec![p.permanent_loss; t],
        group: vec![0; t],
        positions: (0..t).collect(),
    };
    let term = |i: usize| if i + 1 == k { eos } else { sep };
    let emit = |enc: &mut InductiveEncoding, ids: &[usize], end: usize, loss: bool, g: usize, pos: &mut usize| {
        for &id in ids.iter().chain([end].iter()) {
            enc.tokens.push(id);
            enc.loss_mask.push(loss);
            enc.group.push(g);
            enc.positions.push(*pos);
            *pos += 1;
        }
    };
    let mut pos = t;
    emit(&mut enc, &p.states[0], term(0), p.first_loss, 1, &mut pos);
    for i in 1..k {
        let mut pos = t;
        emit(&mut enc, &p.states[i - 1], sep, false, i + 1, &mut pos);
        emit(&mut enc, &p.states[i], term(i), true, i + 1, &mut pos);
    }
    check_len(enc.len(), opts)?;
    Ok(enc)
}

/// One causal sequence per induction step: `P s1 T`, then `P s_{i-1} # s_i T`
/// with loss on the newest state only.
pub fn encode_split(
    vocab: &Vocab,
    question: &Tokens,
    states: &[Tokens],
    opts: &EncodeOptions,
) -> Result<Vec<SplitSequence>, ScratchpadError> {
    let p = plan(vocab, question, states, opts)?;
    let k = p.states.len();
    let (sep, eos) = (vocab.id(STATE_SEP).expect("separator in vocabulary"), vocab.eos());
    let term = |i: usize| if i + 1 == k { eos } else { sep };
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let mut tokens = p.permanent.clone();
        let mut loss_mask = vec![i == 0 && p.permanent_loss; tokens.len()];
        if i > 0 {
            tokens.extend_from_slice(&p.states[i - 1]);
            tokens.push(sep);
            loss_mask.resize(tokens.len(), false);
        }
        tokens.extend_from_slice(&p.states[i]);
        tokens.push(term(i));
        loss_mask.resize(tokens.len(), i > 0 || p.first_loss);
        check_len(tokens.len(), opts)?;
        out.push(SplitSequence { tokens, loss_mask });
    }
    Ok(out)
}

/// Plain causal sequence `question · target` with loss on the target (and
/// optionally the question).
pub fn encode_flat(
    vocab: &Vocab,
    question: &Tokens,
    target: &Tokens,
    loss_on_question: bool,
    max_context: Option<usize>,
) -> Result<InductiveEncoding, ScratchpadError> {
    let q = vocab.encode(question)?;
    let a = vocab.encode(target)?;
    if a.is_empty() {
        return Err(ScratchpadError::Malformed("empty target".into()));
    }
    let n = q.len() + a.len();
    check_len(n, &EncodeOptions { max_context, ..Default::default() })?;
    let mut loss_mask = vec![loss_on_question; q.len()];
    loss_mask.resize(n, true);
    Ok(InductiveEncoding { tokens: [q, a].concat(), loss_mask, group: vec![0; n], positions: (0..n).collect() })
}
