use std::collections::HashSet;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::Rng;

use super::{step_joints, DiscreteJoint, GlobalityError, Result};
use crate::scratchpad::{cumulative_parity_states, dfs_scratchpad};
use crate::tasks::{gen_cycle, node_name, serialize_graph, GraphInstance, GraphKind, GraphMeta, Tokens};

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("pivot has a successor");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Every cycle-task instance of size `n` under the canonical labeling:
/// vertices `0..2n`, edge slot `i` holds the out-edge of vertex `i`, query
/// `(0, n)`. Both classes have `(2n-2)!` members, label-1 graphs first.
pub fn canonical_cycle_graphs(n: usize) -> Result<Vec<GraphInstance>> {
    if !(2..=5).contains(&n) {
        return Err(GlobalityError::Invalid(format!("canonical enumeration supports 2 <= n <= 5, got {n}")));
    }
    let others: Vec<usize> = (1..2 * n).filter(|&v| v != n).collect();
    let nodes: Vec<String> = (0..2 * n).map(node_name).collect();
    let mut out = Vec::new();
    for label in [1u8, 0] {
        let mut perm = others.clone();
        loop {
            let mut succ = vec![0; 2 * n];
            let (a, b) = perm.split_at(n - 1);
            let first: Vec<usize> = std::iter::once(0).chain(a.iter().copied()).collect();
            let second: Vec<usize> = std::iter::once(n).chain(b.iter().copied()).collect();
            let order: Vec<usize> = if label == 1 { first.iter().chain(&second).copied().collect() } else { first.clone() };
            for w in 0..order.len() {
                succ[order[w]] = order[(w + 1) % order.len()];
            }
            if label == 0 {
                for w in 0..n {
                    succ[second[w]] = second[(w + 1) % n];
                }
            }
            out.push(GraphInstance {
                nodes: nodes.clone(),
                edges: (0..2 * n).map(|v| (v, succ[v])).collect(),
                query: vec![0, n],
                label,
                meta: GraphMeta { kind: GraphKind::Cycle, n, distance: (label == 1).then_some(n) },
            });
            if !next_permutation(&mut perm) {
                break;
            }
        }
    }
    Ok(out)
}

/// Uniform joint of (serialized question, label) over the canonical support.
pub fn cycle_label_joint(n: usize) -> Result<DiscreteJoint> {
    let graphs = canonical_cycle_graphs(n)?;
    DiscreteJoint::uniform(graphs.iter().map(|g| (serialize_graph(g), g.label.to_string())))
}

/// Per-token step joints of the DFS scratchpad over the canonical support.
pub fn dfs_steps(n: usize) -> Result<Vec<DiscreteJoint>> {
    let graphs = canonical_cycle_graphs(n)?;
    let samples = graphs
        .iter()
        .map(|g| Ok((serialize_graph(g), dfs_scratchpad(g)?, 1)))
        .collect::<Result<Vec<_>>>()?;
    step_joints(&samples)
}

/// Step joints of the cumulative-parity scratchpad over all `n`-bit inputs:
/// target `t` is the parity of the first `t + 1` bits, for `t < k`.
pub fn cumulative_parity_steps(n: usize, k: usize) -> Result<Vec<DiscreteJoint>> {
    if n == 0 || n > 16 {
        return Err(GlobalityError::Invalid(format!("enumeration supports 1 <= n <= 16, got {n}")));
    }
    let samples = (0..1u32 << n)
        .map(|m| {
            let bits: Vec<u8> = (0..n).map(|i| ((m >> i) & 1) as u8).collect();
            let x = Tokens(bits.iter().map(|b| b.to_string()).collect());
            let states = cumulative_parity_states(&bits, k)?;
            let y = Tokens(states.into_iter().flat_map(|s| s.0).collect());
            Ok((x, y, 1))
        })
        .collect::<Result<Vec<_>>>()?;
    step_joints(&samples)
}

/// `(2 + 2n) / C(2n, n)` as an exact rational.
pub fn cycle_analytic(n: usize) -> Result<BigRational> {
    if n < 2 {
        return Err(GlobalityError::Invalid(format!("n must be >= 2, got {n}")));
    }
    let mut c = BigInt::from(1);
    for i in 0..n {
        c = c * BigInt::from(2 * n - i) / BigInt::from(i + 1);
    }
    Ok(BigRational::new(BigInt::from(2 + 2 * n), c))
}

/// Whether the edges at `slots` form one directed cycle or one simple path.
pub fn subset_event(g: &GraphInstance, slots: &[usize]) -> bool {
    let edges: Vec<(usize, usize)> = slots.iter().map(|&i| g.edges[i]).collect();
    let sources: HashSet<usize> = edges.iter().map(|e| e.0).collect();
    let targets: HashSet<usize> = edges.iter().map(|e| e.1).collect();
    if sources.len() != edges.len() {
        return false;
    }
    let start = if sources == targets {
        edges[0].0
    } else {
        let starts: Vec<usize> = sources.difference(&targets).copied().collect();
        if starts.len() != 1 {
            return false;
        }
        starts[0]
    };
    let mut cur = start;
    for step in 0..edges.len() {
        let Some(&(_, v)) = edges.iter().find(|e| e.0 == cur) else {
            return false;
        };
        cur = v;
        if cur == start && step + 1 < edges.len() {
            return false;
        }
    }
    true
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubsetEventRates {
    pub one_cycle: f64,
    pub two_cycles: f64,
    /// Frequency under the balanced mixture.
    pub mixture: f64,
    pub trials_per_class: usize,
}

/// Monte-Carlo frequency of [`subset_event`] on the first `n` serialized
/// edges of sampled cycle-task instances.
pub fn subset_event_rates<R: Rng + ?Sized>(n: usize, trials_per_class: usize, rng: &mut R) -> Result<SubsetEventRates> {
    if trials_per_class == 0 {
        return Err(GlobalityError::Invalid("trials_per_class must be >= 1".into()));
    }
    let slots: Vec<usize> = (0..n).collect();
    let mut hits = [0usize; 2];
    for label in [0u8, 1] {
        for _ in 0..trials_per_class {
            let g = gen_cycle(n, Some(label), rng)?;
            hits[label as usize] += usize::from(subset_event(&g, &slots));
        }
    }
    let t = trials_per_class as f64;
    Ok(SubsetEventRates {
        one_cycle: hits[1] as f64 / t,
        two_cycles: hits[0] as f64 / t,
        mixture: (hits[0] + hits[1]) as f64 / (2.0 * t),
        trials_per_class,
    })
}
