use std::rc::Rc;

use super::config::LN_EPS;
use super::{ModelConfig, ModelError, ParameterStore, Result};
use crate::numerics::{AttentionLayout, Reduction, Scalar, Segment, Tape, Tensor, Var};

/// Which earlier tokens each token may attend to.
#[derive(Clone, Debug, PartialEq)]
pub enum Visibility {
    /// Ordinary lower-triangular mask.
    Causal,
    /// Group ids: `i` sees `j ≤ i` iff `group[j]` is 0 or equals `group[i]`.
    Groups(Vec<usize>),
    /// Explicit row-major `T×T` relation; must be a subset of the causal mask.
    Dense(Vec<bool>),
}

/// One sequence of a packed batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqInput {
    pub tokens: Vec<usize>,
    pub positions: Vec<usize>,
    pub visibility: Visibility,
}

impl SeqInput {
    pub fn causal(tokens: Vec<usize>) -> Self {
        let positions = (0..tokens.len()).collect();
        Self { tokens, positions, visibility: Visibility::Causal }
    }

    pub fn grouped(tokens: Vec<usize>, positions: Vec<usize>, groups: Vec<usize>) -> Self {
        Self { tokens, positions, visibility: Visibility::Groups(groups) }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Appends a token one position after the last, in the last token's group.
    pub fn push(&mut self, token: usize) -> Result<()> {
        let next = self.positions.last().map_or(0, |p| p + 1);
        match &mut self.visibility {
            Visibility::Causal => {}
            Visibility::Groups(g) => {
                let last = *g.last().ok_or_else(|| ModelError::Input("cannot extend an empty grouped sequence".into()))?;
                g.push(last);
            }
            Visibility::Dense(_) => {
                return Err(ModelError::Input("dense masks cannot be extended implicitly".into()));
            }
        }
        self.tokens.push(token);
        self.positions.push(next);
        Ok(())
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let t = self.len();
        if t == 0 {
            return Err(ModelError::Input("empty sequence".into()));
        }
        if t > cfg.max_context {
            return Err(ModelError::ContextOverflow { len: t, max: cfg.max_context });
        }
        if self.positions.len() != t {
            return Err(ModelError::Input(format!("{} positions for {t} tokens", self.positions.len())));
        }
        if let Some(&tok) = self.tokens.iter().find(|&&x| x >= cfg.vocab_size) {
            return Err(ModelError::Index { what: "token", index: tok, bound: cfg.vocab_size });
        }
        if let Some(&p) = self.positions.iter().find(|&&p| p >= cfg.max_context) {
            return Err(ModelError::Index { what: "position", index: p, bound: cfg.max_context });
        }
        Ok(())
    }

    /// Dense visibility relation, validated.
    pub fn visible_matrix(&self) -> Result<Vec<bool>> {
        let t = self.len();
        match &self.visibility {
            Visibility::Causal => Ok((0..t * t).map(|idx| idx % t <= idx / t).collect()),
            Visibility::Groups(g) => {
                if g.len() != t {
                    return Err(ModelError::Input(format!("{} group ids for {t} tokens", g.len())));
                }
                Ok((0..t * t)
                    .map(|idx| {
                        let (i, j) = (idx / t, idx % t);
                        j <= i && (g[j] == 0 || g[j] == g[i])
                    })
                    .collect())
            }
            Visibility::Dense(m) => {
                if m.len() != t * t {
                    return Err(ModelError::Input(format!("mask of {} entries for {t} tokens", m.len())));
                }
                for i in 0..t {
                    if let Some(j) = (i + 1..t).find(|&j| m[i * t + j]) {
                        return Err(ModelError::MaskNotCausal { row: i, col: j });
                    }
                    if !m[i * t..i * t + i + 1].iter().any(|&v| v) {
                        return Err(ModelError::MaskFullyHidden { row: i });
                    }
                }
                Ok(m.clone())
            }
        }
    }
}

/// A sequence with next-token targets: row `i` predicts `targets[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSeq {
    pub input: SeqInput,
    pub targets: Vec<usize>,
    pub loss_mask: Vec<bool>,
}

struct LayerVars {
    ln1: (Var, Var),
    q: (Var, Var),
    k: (Var, Var),
    v: (Var, Var),
    o: (Var, Var),
    ln2: (Var, Var),
    fc: (Var, Var),
    proj: (Var, Var),
}

/// Parameters placed on a tape. `vars[i]` corresponds to the store's i-th tensor.
pub struct ParamVars {
    pub vars: Vec<Var>,
    wte: Var,
    wpe: Var,
    layers: Vec<LayerVars>,
    ln_f: (Var, Var),
    head: Option<Var>,
}

/// Borrows every tensor of `store` onto `tape`.
pub fn bind_params<'p, T: Scalar>(
    tape: &mut Tape<'p, T>,
    store: &'p ParameterStore<T>,
    cfg: &ModelConfig,
    requires_grad: bool,
) -> Result<ParamVars> {
    let expected = super::params::layout(cfg);
    if expected.len() != store.len() {
        return Err(ModelError::Input(format!("store has {} tensors, config needs {}", store.len(), expected.len())));
    }
    for ((name, shape), (got, t)) in expected.iter().zip(store.iter()) {
        if name != got || shape.as_slice() != t.shape() {
            return Err(ModelError::Input(format!("parameter {got} {:?} where {name} {shape:?} expected", t.shape())));
        }
    }
    let vars: Vec<Var> = store.tensors().iter().map(|t| tape.param(t, requires_grad)).collect();
    let at = |name: &str| vars[store.position(name).expect("layout checked")];
    let pair = |p: &str| (at(&format!("{p}.w")), at(&format!("{p}.b")));
    let norm = |p: &str| (at(&format!("{p}.g")), at(&format!("{p}.b")));
    let layers = (0..cfg.n_layers)
        .map(|l| LayerVars {
            ln1: norm(&format!("h{l}.ln1")),
            q: pair(&format!("h{l}.attn.q")),
            k: pair(&format!("h{l}.attn.k")),
            v: pair(&format!("h{l}.attn.v")),
            o: pair(&format!("h{l}.attn.o")),
            ln2: norm(&format!("h{l}.ln2")),
            fc: pair(&format!("h{l}.mlp.fc")),
            proj: pair(&format!("h{l}.mlp.proj")),
        })
        .collect();
    Ok(ParamVars {
        wte: at("wte"),
        wpe: at("wpe"),
        layers,
        ln_f: norm("ln_f"),
        head: (!cfg.tie_output_head).then(|| at("head.w")),
        vars,
    })
}

fn site_seed(seed: u64, site: u64) -> u64 {
    let mut z = seed ^ site.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn linear<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, (w, b): (Var, Var)) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    Ok(tape.add_row(y, b)?)
}

/// Final-layer-normed hidden states for every row of the packed batch.
fn hidden<T: Scalar>(
    tape: &mut Tape<'_, T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    batch: &[SeqInput],
    dropout_seed: Option<u64>,
) -> Result<Var> {
    if batch.is_empty() {
        return Err(ModelError::Input("empty batch".into()));
    }
    let mut tokens = Vec::new();
    let mut positions = Vec::new();
    let mut segments = Vec::with_capacity(batch.len());
    for s in batch {
        s.check(cfg)?;
        segments.push(Segment { start: tokens.len(), len: s.len(), visible: s.visible_matrix()? });
        tokens.extend_from_slice(&s.tokens);
        positions.extend_from_slice(&s.positions);
    }
    let layout = Rc::new(AttentionLayout { segments, n_heads: cfg.n_heads });
    let p = match dropout_seed {
        Some(_) => cfg.dropout,
        None => 0.0,
    };
    let mut site = 0u64;
    let mut drop = |tape: &mut Tape<'_, T>, x: Var| -> Result<Var> {
        site += 1;
        match dropout_seed {
            Some(seed) if p > 0.0 => Ok(tape.dropout(x, p, site_seed(seed, site))?),
            _ => Ok(x),
        }
    };
    let te = tape.embedding(pv.wte, &tokens)?;
    let pe = tape.embedding(pv.wpe, &positions)?;
    let mut x = tape.add(te, pe)?;
    x = drop(tape, x)?;
    for l in &pv.layers {
        let h = tape.layernorm(x, l.ln1.0, l.ln1.1, LN_EPS)?;
        let q = linear(tape, h, l.q)?;
        let k = linear(tape, h, l.k)?;
        let v = linear(tape, h, l.v)?;
        let a = tape.attention(q, k, v, Rc::clone(&layout))?;
        let a = linear(tape, a, l.o)?;
        let a = drop(tape, a)?;
        x = tape.add(x, a)?;
        let h = tape.layernorm(x, l.ln2.0, l.ln2.1, LN_EPS)?;
        let f = linear(tape, h, l.fc)?;
        let f = tape.gelu(f)?;
        let f = linear(tape, f, l.proj)?;
        let f = drop(tape, f)?;
        x = tape.add(x, f)?;
    }
    Ok(tape.layernorm(x, pv.ln_f.0, pv.ln_f.1, LN_EPS)?)
}

fn project<T: Scalar>(tape: &mut Tape<'_, T>, pv: &ParamVars, h: Var) -> Result<Var> {
    let head = match pv.head {
        Some(w) => w,
        None => tape.transpose(pv.wte)?,
    };
    Ok(tape.matmul(h, head)?)
}

/// Logits `[rows.len() × V]` for the given global rows of the packed batch.
pub fn logits_at<T: Scalar>(
    tape: &mut Tape<'_, T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    batch: &[SeqInput],
    rows: &[usize],
    dropout_seed: Option<u64>,
) -> Result<Var> {
    let h = hidden(tape, pv, cfg, batch, dropout_seed)?;
    let h = tape.gather_rows(h, rows)?;
    project(tape, pv, h)
}

/// Summed cross entropy over every loss-carrying row of `batch`; also returns
/// the number of such rows.
pub fn sequence_loss<T: Scalar>(
    tape: &mut Tape<'_, T>,
    pv: &ParamVars,
    cfg: &ModelConfig,
    batch: &[TrainSeq],
    dropout_seed: Option<u64>,
) -> Result<(Var, usize)> {
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    let mut offset = 0;
    for s in batch {
        let t = s.input.len();
        if s.targets.len() != t || s.loss_mask.len() != t {
            return Err(ModelError::Input(format!(
                "{t} tokens, {} targets, {} mask entries",
                s.targets.len(),
                s.loss_mask.len()
            )));
        }
        for i in (0..t).filter(|&i| s.loss_mask[i]) {
            rows.push(offset + i);
            targets.push(s.targets[i]);
        }
        offset += t;
    }
    let inputs: Vec<SeqInput> = batch.iter().map(|s| s.input.clone()).collect();
    let logits = logits_at(tape, pv, cfg, &inputs, &rows, dropout_seed)?;
    let mask = vec![true; rows.len()];
    let loss = tape.cross_entropy(logits, &targets, &mask, Reduction::Sum)?;
    Ok((loss, rows.len()))
}

/// Logits for every row of a packed batch (no dropout).
pub fn forward_logits<T: Scalar>(params: &ParameterStore<T>, cfg: &ModelConfig, batch: &[SeqInput]) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, params, cfg, false)?;
    let total: usize = batch.iter().map(SeqInput::len).sum();
    let rows: Vec<usize> = (0..total).collect();
    let out = logits_at(&mut tape, &pv, cfg, batch, &rows, None)?;
    Ok(tape.value(out).clone())
}

/// Single sequence with an explicit `T×T` visibility mask; returns `[T×V]` logits.
pub fn forward<T: Scalar>(
    params: &ParameterStore<T>,
    cfg: &ModelConfig,
    tokens: &[usize],
    positions: &[usize],
    mask: &[bool],
) -> Result<Tensor<T>> {
    let seq = SeqInput { tokens: tokens.to_vec(), positions: positions.to_vec(), visibility: Visibility::Dense(mask.to_vec()) };
    forward_logits(params, cfg, std::slice::from_ref(&seq))
}
