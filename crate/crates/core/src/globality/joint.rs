use std::collections::HashMap;

use rand::Rng;

use super::{GlobalityError, Result};
use crate::tasks::Tokens;

/// Weighted finite support of `(X, Y)` with fixed-width token sequences `X`.
///
/// Tokens are interned; `Y` is an opaque label string. An empirical joint
/// (built from samples) carries counts as weights and is only valid in
/// plug-in mode.
#[derive(Clone, Debug)]
pub struct DiscreteJoint {
    table: Vec<String>,
    labels: Vec<String>,
    xs: Vec<Vec<u32>>,
    ys: Vec<u32>,
    weights: Vec<u64>,
    hist: Vec<u32>,
    width: usize,
    empirical: bool,
}

#[derive(Default)]
struct Interner {
    ids: HashMap<String, u32>,
    table: Vec<String>,
}

impl Interner {
    fn id(&mut self, s: &str) -> u32 {
        if let Some(&i) = self.ids.get(s) {
            return i;
        }
        let i = self.table.len() as u32;
        self.ids.insert(s.to_string(), i);
        self.table.push(s.to_string());
        i
    }
}

impl DiscreteJoint {
    /// Support points with positive integer weights.
    pub fn from_weighted<I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Tokens, String, u64)>,
    {
        Self::build(items, false)
    }

    /// Uniform distribution over the listed points (repeats add mass).
    pub fn uniform<I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Tokens, String)>,
    {
        Self::build(items.into_iter().map(|(x, y)| (x, y, 1)), false)
    }

    /// Empirical joint of `n_samples` draws.
    pub fn from_sampler<R: Rng + ?Sized>(
        mut sampler: impl FnMut(&mut R) -> (Tokens, String),
        n_samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_samples == 0 {
            return Err(GlobalityError::Invalid("n_samples must be >= 1".into()));
        }
        let draws: Vec<_> = (0..n_samples).map(|_| sampler(rng)).collect();
        Self::build(draws.into_iter().map(|(x, y)| (x, y, 1)), true)
    }

    fn build<I>(items: I, empirical: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (Tokens, String, u64)>,
    {
        let mut tok = Interner::default();
        let mut lab = Interner::default();
        let mut hists: HashMap<Vec<(u32, u32)>, u32> = HashMap::new();
        let mut out = DiscreteJoint {
            table: Vec::new(),
            labels: Vec::new(),
            xs: Vec::new(),
            ys: Vec::new(),
            weights: Vec::new(),
            hist: Vec::new(),
            width: 0,
            empirical,
        };
        for (x, y, w) in items {
            if w == 0 {
                return Err(GlobalityError::Invalid("support weights must be positive".into()));
            }
            let ids: Vec<u32> = x.iter().map(|t| tok.id(t)).collect();
            if out.xs.is_empty() {
                out.width = ids.len();
            } else if ids.len() != out.width {
                return Err(GlobalityError::Invalid(format!(
                    "inputs must share one width, got {} and {}",
                    out.width,
                    ids.len()
                )));
            }
            let mut counts: Vec<(u32, u32)> = Vec::new();
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            for t in sorted {
                match counts.last_mut() {
                    Some((last, c)) if *last == t => *c += 1,
                    _ => counts.push((t, 1)),
                }
            }
            let next = hists.len() as u32;
            out.hist.push(*hists.entry(counts).or_insert(next));
            out.xs.push(ids);
            out.ys.push(lab.id(&y));
            out.weights.push(w);
        }
        if out.xs.is_empty() {
            return Err(GlobalityError::Invalid("empty support".into()));
        }
        out.table = tok.table;
        out.labels = lab.table;
        Ok(out)
    }

    /// Number of addressable input positions.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn is_empirical(&self) -> bool {
        self.empirical
    }

    pub fn total_weight(&self) -> u64 {
        self.weights.iter().sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let total = self.total_weight() as f64;
        self.weights.iter().map(|&w| w as f64 / total).collect()
    }

    /// Input tokens of support point `i`.
    pub fn x(&self, i: usize) -> Tokens {
        Tokens(self.xs[i].iter().map(|&t| self.table[t as usize].clone()).collect())
    }

    pub fn y(&self, i: usize) -> &str {
        &self.labels[self.ys[i] as usize]
    }

    /// Draws one support point proportionally to its weight.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Tokens, String) {
        let mut r = rng.gen_range(0..self.total_weight());
        for (i, &w) in self.weights.iter().enumerate() {
            if r < w {
                return (self.x(i), self.y(i).to_string());
            }
            r -= w;
        }
        unreachable!("weights sum to the total")
    }

    pub(crate) fn raw_x(&self, i: usize) -> &[u32] {
        &self.xs[i]
    }

    pub(crate) fn raw_y(&self, i: usize) -> u32 {
        self.ys[i]
    }

    pub(crate) fn raw_hist(&self, i: usize) -> u32 {
        self.hist[i]
    }

    pub(crate) fn weight(&self, i: usize) -> u64 {
        self.weights[i]
    }
}

/// Per-step joints of `(X, Y_<t) → Y_t` from weighted `(X, [Y_1..Y_m])`.
///
/// Every sample must have the same number of target tokens.
pub fn step_joints(samples: &[(Tokens, Tokens, u64)]) -> Result<Vec<DiscreteJoint>> {
    let m = samples
        .first()
        .map(|s| s.1.len())
        .ok_or_else(|| GlobalityError::Invalid("no samples".into()))?;
    if samples.iter().any(|s| s.1.len() != m) {
        return Err(GlobalityError::Invalid("target sequences differ in length".into()));
    }
    (0..m)
        .map(|t| {
            DiscreteJoint::from_weighted(samples.iter().map(|(x, ys, w)| {
                let mut ctx = x.clone();
                ctx.0.extend(ys.0[..t].iter().cloned());
                (ctx, ys.0[t].clone(), *w)
            }))
        })
        .collect()
}
