//! Wengert-list autodiff.
//!
//! Every op appends a node holding its output value plus whatever the
//! backward pass needs. `backward` walks the list from the loss down to index
//! zero, which is a reverse topological order because inputs always precede
//! their consumers.

use std::borrow::Cow;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{axpy, dot, gelu, gelu_grad, gemm, softmax_backward_in_place, softmax_in_place};
use super::{NumericsError, Result, Scalar, Tensor, HIDDEN_THRESHOLD};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// One packed sequence: rows `start..start+len` of the activations, with a
/// dense `len×len` visibility relation (`visible[i*len + j]`: query `i` may
/// read key `j`).
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub visible: Vec<bool>,
}

impl Segment {
    pub fn causal(start: usize, len: usize) -> Self {
        let visible = (0..len * len).map(|idx| idx % len <= idx / len).collect();
        Self { start, len, visible }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionLayout {
    pub segments: Vec<Segment>,
    pub n_heads: usize,
}

impl AttentionLayout {
    pub fn rows(&self) -> usize {
        self.segments.iter().map(|s| s.start + s.len).max().unwrap_or(0)
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, factor: T },
    AddRow { a: Var, bias: Var },
    Transpose { a: Var },
    Gelu { a: Var },
    Embedding { table: Var, ids: Vec<usize> },
    GatherRows { a: Var, rows: Vec<usize> },
    Dropout { a: Var, keep: Vec<T> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    MaskedSoftmax { a: Var },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<T>, probs: Vec<T> },
    Sum { a: Var },
    Attention { q: Var, k: Var, v: Var, layout: Rc<AttentionLayout>, probs: Vec<T> },
}

struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording of a forward computation. Leaves may borrow their values
/// (see [`Tape::param`]) so frozen parameters are never copied.
pub struct Tape<'p, T: Scalar = f32> {
    nodes: Vec<Node<'p, T>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by leaf [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, detail: String) -> NumericsError {
    NumericsError::Shape { op, detail }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Owned(value), op: Op::Leaf, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that borrows its value.
    pub fn param(&mut self, value: &'p Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(value), op: Op::Leaf, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.value(v).as_matrix(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}x{k}] x [{k2}x{n}]")));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), Op::MatMul { a, b }, &[a, b])
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(x, y)| *x + *y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push("add", out, Op::Add { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(x, y)| *x * *y).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push("mul", out, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.push("scale", out, Op::Scale { a, factor }, &[a])
    }

    /// `a[.., j] + bias[j]` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.value(bias).numel() != cols {
            return Err(shape_err(
                "add_row",
                format!("bias {:?} for rows of width {cols}", self.value(bias).shape()),
            ));
        }
        let b = self.value(bias).data();
        let va = self.value(a);
        let mut data = va.data().to_vec();
        for row in data.chunks_exact_mut(cols) {
            for (x, bj) in row.iter_mut().zip(b) {
                *x += *bj;
            }
        }
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push("add_row", out, Op::AddRow { a, bias }, &[a, bias])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "transpose")?;
        let src = self.value(a).data();
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        self.push("transpose", Tensor::from_parts(vec![n, m], data), Op::Transpose { a }, &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(gelu);
        self.push("gelu", out, Op::Gelu { a }, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    /// Row lookup `table[ids[i]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.matrix(table, "embedding")?;
        if ids.is_empty() {
            return Err(NumericsError::Invalid("embedding of an empty id list".into()));
        }
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(NumericsError::Index { op: "embedding", index: id, bound: vocab });
            }
            data.extend_from_slice(&t[id * d..(id + 1) * d]);
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        self.push("embedding", out, Op::Embedding { table, ids: ids.to_vec() }, &[table])
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix(a, "gather_rows")?;
        if rows.is_empty() {
            return Err(NumericsError::Invalid("gather of zero rows".into()));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &row in rows {
            if row >= r {
                return Err(NumericsError::Index { op: "gather_rows", index: row, bound: r });
            }
            data.extend_from_slice(&src[row * c..(row + 1) * c]);
        }
        let out = Tensor::from_parts(vec![rows.len(), c], data);
        self.push("gather_rows", out, Op::GatherRows { a, rows: rows.to_vec() }, &[a])
    }

    /// Inverted dropout; `seed` fully determines the keep mask.
    pub fn dropout(&mut self, a: Var, p: f64, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Invalid(format!("dropout probability {p}")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = T::from_f64(1.0 / (1.0 - p));
        let keep: Vec<T> = (0..self.value(a).numel())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { scale })
            .collect();
        let va = self.value(a);
        let data = va.data().iter().zip(&keep).map(|(x, k)| *x * *k).collect();
        let out = Tensor::from_parts(va.shape().to_vec(), data);
        self.push("dropout", out, Op::Dropout { a, keep }, &[a])
    }

    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(NumericsError::Invalid(format!("layernorm eps {eps}")));
        }
        let d = self.value(x).cols();
        if self.value(gain).numel() != d || self.value(bias).numel() != d {
            return Err(shape_err("layernorm", format!("affine parameters for width {d}")));
        }
        let rows = self.value(x).rows();
        let eps = T::from_f64(eps);
        let dn = T::from_f64(d as f64);
        let (g, b, src) = (self.value(gain).data(), self.value(bias).data(), self.value(x).data());
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::from_parts(self.value(x).shape().to_vec(), out);
        self.push("layernorm", out, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias])
    }

    /// Row-wise softmax over the last axis with an additive mask of the same
    /// shape. Mask entries must be `0` (visible) or at most the hidden
    /// sentinel; hidden entries come out exactly zero.
    pub fn masked_softmax(&mut self, logits: Var, mask: &Tensor<T>) -> Result<Var> {
        let shape = self.value(logits).shape().to_vec();
        if mask.shape() != shape.as_slice() {
            return Err(shape_err("masked_softmax", format!("mask {:?} for {:?}", mask.shape(), shape)));
        }
        let n = self.value(logits).cols();
        let rows = self.value(logits).rows();
        let src = self.value(logits).data();
        let mut out = vec![T::zero(); rows * n];
        let mut buf = Vec::with_capacity(n);
        let mut idx = Vec::with_capacity(n);
        for r in 0..rows {
            buf.clear();
            idx.clear();
            for j in 0..n {
                let m = mask.data()[r * n + j].as_f64();
                if m == 0.0 {
                    buf.push(src[r * n + j]);
                    idx.push(j);
                } else if m > HIDDEN_THRESHOLD {
                    return Err(NumericsError::BadMask { op: "masked_softmax", value: m });
                }
            }
            if buf.is_empty() {
                return Err(NumericsError::FullyMasked { op: "masked_softmax", row: r });
            }
            softmax_in_place(&mut buf);
            for (p, &j) in buf.iter().zip(&idx) {
                out[r * n + j] = *p;
            }
        }
        self.push("masked_softmax", Tensor::from_parts(shape, out), Op::MaskedSoftmax { a: logits }, &[logits])
    }

    /// Masked token-level cross entropy of `logits: [R×V]` against `targets`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        loss_mask: &[bool],
        reduction: Reduction,
    ) -> Result<Var> {
        let (r, v) = self.matrix(logits, "cross_entropy")?;
        if targets.len() != r || loss_mask.len() != r {
            return Err(shape_err(
                "cross_entropy",
                format!("{r} rows, {} targets, {} mask entries", targets.len(), loss_mask.len()),
            ));
        }
        let count = loss_mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(NumericsError::EmptyLossMask);
        }
        let unit = match reduction {
            Reduction::Mean => T::one() / T::from_f64(count as f64),
            Reduction::Sum => T::one(),
        };
        let src = self.value(logits).data();
        let mut probs = src.to_vec();
        let mut weights = vec![T::zero(); r];
        // Accumulated in 64-bit so long sums stay accurate in 32-bit mode.
        let mut loss = 0.0f64;
        for row in 0..r {
            let t = targets[row];
            if t >= v {
                return Err(NumericsError::Index { op: "cross_entropy", index: t, bound: v });
            }
            let p = &mut probs[row * v..(row + 1) * v];
            softmax_in_place(p);
            if loss_mask[row] {
                weights[row] = unit;
                let logits_row = &src[row * v..(row + 1) * v];
                let max = logits_row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max + logits_row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
                loss += (unit * (lse - logits_row[t])).as_f64();
            }
        }
        let op = Op::CrossEntropy { logits, targets: targets.to_vec(), weights, probs };
        self.push("cross_entropy", Tensor::scalar(T::from_f64(loss)), op, &[logits])
    }

    /// Multi-head scaled dot-product attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `[N×d]`; each segment attends only within its own
    /// rows and only to keys its visibility relation allows. Sums over keys
    /// run over visible keys in increasing order, so hidden keys have no
    /// effect on the arithmetic at all.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: Rc<AttentionLayout>) -> Result<Var> {
        let (n, d) = self.matrix(q, "attention")?;
        if self.value(k).shape() != [n, d] || self.value(v).shape() != [n, d] {
            return Err(shape_err("attention", "q, k, v must share a shape".into()));
        }
        let heads = layout.n_heads;
        if heads == 0 || d % heads != 0 {
            return Err(shape_err("attention", format!("width {d} not divisible by {heads} heads")));
        }
        if layout.rows() > n {
            return Err(shape_err("attention", format!("layout covers {} rows of {n}", layout.rows())));
        }
        let dh = d / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = vec![T::zero(); n * d];
        let total: usize = layout.segments.iter().map(|s| s.len * s.len * heads).sum();
        let mut probs = vec![T::zero(); total];
        let mut base = 0;
        let mut scores = Vec::new();
        let mut keys = Vec::new();
        for seg in &layout.segments {
            if seg.visible.len() != seg.len * seg.len {
                return Err(shape_err("attention", "visibility size".into()));
            }
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seg.len {
                    keys.clear();
                    keys.extend((0..seg.len).filter(|&j| seg.visible[i * seg.len + j]));
                    if keys.is_empty() {
                        return Err(NumericsError::FullyMasked { op: "attention", row: seg.start + i });
                    }
                    let qi = &qd[(seg.start + i) * d + off..][..dh];
                    scores.clear();
                    scores.extend(keys.iter().map(|&j| dot(qi, &kd[(seg.start + j) * d + off..][..dh]) * scale));
                    softmax_in_place(&mut scores);
                    let prow = &mut probs[base + i * seg.len..][..seg.len];
                    let orow = &mut out[(seg.start + i) * d + off..][..dh];
                    for (&j, &p) in keys.iter().zip(&scores) {
                        prow[j] = p;
                        axpy(p, &vd[(seg.start + j) * d + off..][..dh], orow);
                    }
                }
                base += seg.len * seg.len;
            }
        }
        let out = Tensor::from_parts(vec![n, d], out);
        self.push("attention", out, Op::Attention { q, k, v, layout, probs }, &[q, k, v])
    }

    /// Reverse pass from a scalar `loss`. Every leaf created with
    /// `requires_grad` that the loss depends on receives a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumericsError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Leaf = node.op {
                leaf_grads[idx] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Runs `f` on the gradient buffer of `v`, allocating zeros on first use.
    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.wants(v) {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }

    fn backward_node(&self, node: &Node<'p, T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| gemm(m, n, k, g, false, bd, true, ga, true));
                self.accumulate(grads, *b, |gb| gemm(k, m, n, ad, true, g, false, gb, true));
            }
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |ga| axpy(T::one(), g, ga));
                self.accumulate(grads, *b, |gb| axpy(T::one(), g, gb));
            }
            Op::Mul { a, b } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(bd) {
                        *x += *gi * *y;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((x, gi), y) in gb.iter_mut().zip(g).zip(ad) {
                        *x += *gi * *y;
                    }
                });
            }
            Op::Scale { a, factor } => self.accumulate(grads, *a, |ga| axpy(*factor, g, ga)),
            Op::AddRow { a, bias } => {
                self.accumulate(grads, *a, |ga| axpy(T::one(), g, ga));
                let cols = self.value(*bias).numel();
                self.accumulate(grads, *bias, |gb| {
                    for row in g.chunks_exact(cols) {
                        axpy(T::one(), row, gb);
                    }
                });
            }
            Op::Transpose { a } => {
                let (m, n) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }
            Op::Gelu { a } => {
                let ad = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((x, gi), xi) in ga.iter_mut().zip(g).zip(ad) {
                        *x += *gi * gelu_grad(*xi);
                    }
                });
            }
            Op::Sum { a } => self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Embedding { table, ids } => {
                let d = self.value(*table).cols();
                self.accumulate(grads, *table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(T::one(), &g[r * d..(r + 1) * d], &mut gt[id * d..(id + 1) * d]);
                    }
                });
            }
            Op::GatherRows { a, rows } => {
                let c = self.value(*a).cols();
                self.accumulate(grads, *a, |ga| {
                    for (r, &src) in rows.iter().enumerate() {
                        axpy(T::one(), &g[r * c..(r + 1) * c], &mut ga[src * c..(src + 1) * c]);
                    }
                });
            }
            Op::Dropout { a, keep } => self.accumulate(grads, *a, |ga| {
                for ((x, gi), k) in ga.iter_mut().zip(g).zip(keep) {
                    *x += *gi * *k;
                }
            }),
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = self.value(*gain).numel();
                let gd = self.value(*gain).data();
                let dn = T::from_f64(d as f64);
                self.accumulate(grads, *x, |gx| {
                    let mut dxhat = vec![T::zero(); d];
                    for (r, rs) in rstd.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        for j in 0..d {
                            dxhat[j] = gr[j] * gd[j];
                        }
                        let mean_d = dxhat.iter().copied().sum::<T>() / dn;
                        let mean_dh = dot(&dxhat, hr) / dn;
                        for j in 0..d {
                            gx[r * d + j] += *rs * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                });
                self.accumulate(grads, *gain, |gg| {
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.accumulate(grads, *bias, |gb| {
                    for gr in g.chunks_exact(d) {
                        axpy(T::one(), gr, gb);
                    }
                });
            }
            Op::MaskedSoftmax { a } => {
                let n = node.value.cols();
                let p = node.value.data();
                self.accumulate(grads, *a, |ga| {
                    let mut buf = vec![T::zero(); n];
                    for (r, pr) in p.chunks_exact(n).enumerate() {
                        buf.copy_from_slice(&g[r * n..(r + 1) * n]);
                        softmax_backward_in_place(pr, &mut buf);
                        axpy(T::one(), &buf, &mut ga[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                let v = self.value(*logits).cols();
                self.accumulate(grads, *logits, |gl| {
                    for (r, &w) in weights.iter().enumerate() {
                        if w == T::zero() {
                            continue;
                        }
                        let s = g[0] * w;
                        let row = &mut gl[r * v..(r + 1) * v];
                        axpy(s, &probs[r * v..(r + 1) * v], row);
                        row[targets[r]] -= s;
                    }
                });
            }
            Op::Attention { q, k, v, layout, probs } => self.attention_backward(*q, *k, *v, layout, probs, g, grads),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        layout: &AttentionLayout,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (n, d) = (self.value(q).shape()[0], self.value(q).shape()[1]);
        let heads = layout.n_heads;
        let dh = d / heads;
        let scale = T::from_f64(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut gq = vec![T::zero(); n * d];
        let mut gk = vec![T::zero(); n * d];
        let mut gv = vec![T::zero(); n * d];
        let mut base = 0;
        let mut keys = Vec::new();
        let mut ds = Vec::new();
        let mut ps = Vec::new();
        for seg in &layout.segments {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..seg.len {
                    keys.clear();
                    keys.extend((0..seg.len).filter(|&j| seg.visible[i * seg.len + j]));
                    let prow = &probs[base + i * seg.len..][..seg.len];
                    let gi = &g[(seg.start + i) * d + off..][..dh];
                    ps.clear();
                    ds.clear();
                    for &j in &keys {
                        let row_j = (seg.start + j) * d + off;
                        ps.push(prow[j]);
                        ds.push(dot(gi, &vd[row_j..][..dh]));
                        axpy(prow[j], gi, &mut gv[row_j..][..dh]);
                    }
                    softmax_backward_in_place(&ps, &mut ds);
                    let row_i = (seg.start + i) * d + off;
                    for (&j, &dsj) in keys.iter().zip(&ds) {
                        let row_j = (seg.start + j) * d + off;
                        axpy(scale * dsj, &kd[row_j..][..dh], &mut gq[row_i..][..dh]);
                        axpy(scale * dsj, &qd[row_i..][..dh], &mut gk[row_j..][..dh]);
                    }
                }
                base += seg.len * seg.len;
            }
        }
        self.accumulate(grads, q, |x| axpy(T::one(), &gq, x));
        self.accumulate(grads, k, |x| axpy(T::one(), &gk, x));
        self.accumulate(grads, v, |x| axpy(T::one(), &gv, x));
    }
}
