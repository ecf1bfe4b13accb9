use std::collections::{HashMap, VecDeque};

use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use serde_json::json;

use super::tokens::{tokenize_graph, Tokens};
use super::vocab::{node_name, NODE_POOL};
use super::{Sample, TaskError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    Cycle,
    ThreeCycle,
    RandomGraph,
    OodCycle,
    Parsed,
}

impl GraphKind {
    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Cycle => "cycle",
            GraphKind::ThreeCycle => "three_cycle",
            GraphKind::RandomGraph => "random_graph",
            GraphKind::OodCycle => "ood_cycle",
            GraphKind::Parsed => "parsed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphMeta {
    pub kind: GraphKind,
    pub n: usize,
    pub distance: Option<usize>,
}

/// Directed graph over named vertices with a query and its label.
///
/// Vertices are indices into `nodes`; `nodes` lists names in order of first
/// appearance in the serialized question, so parsing is an exact inverse.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphInstance {
    pub nodes: Vec<String>,
    pub edges: Vec<(usize, usize)>,
    pub query: Vec<usize>,
    pub label: u8,
    pub meta: GraphMeta,
}

impl GraphInstance {
    pub fn out_degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.0 == v).count()
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.1 == v).count()
    }

    pub fn successors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
        }
        adj
    }

    pub fn source(&self) -> usize {
        self.query[0]
    }

    pub fn target(&self) -> usize {
        self.query[1]
    }

    /// Relabels vertices in order of first appearance (edges, then query).
    fn canonicalize(mut self) -> Self {
        let mut map: HashMap<usize, usize> = HashMap::new();
        let mut names = Vec::new();
        let order: Vec<usize> = self.edges.iter().flat_map(|&(u, v)| [u, v]).chain(self.query.iter().copied()).collect();
        for v in order {
            map.entry(v).or_insert_with(|| {
                names.push(self.nodes[v].clone());
                names.len() - 1
            });
        }
        self.edges = self.edges.iter().map(|&(u, v)| (map[&u], map[&v])).collect();
        self.query = self.query.iter().map(|v| map[v]).collect();
        self.nodes = names;
        self
    }

    pub fn to_sample(&self) -> Sample {
        let mut meta = serde_json::Map::new();
        meta.insert("kind".into(), json!(self.meta.kind.name()));
        meta.insert("n".into(), json!(self.meta.n));
        meta.insert("label".into(), json!(self.label));
        if let Some(d) = self.meta.distance {
            meta.insert("distance".into(), json!(d));
        }
        Sample {
            task: self.meta.kind.name().to_string(),
            question: serialize_graph(self),
            prelude: Tokens::new(),
            states: Vec::new(),
            answer: Tokens::chars(if self.label == 1 { "1" } else { "0" }),
            meta,
        }
    }
}

/// `u>v;` per edge in stored order, then `s?t;`. A three-vertex query is
/// written `a?b?c` without a closing `;`.
pub fn serialize_graph(g: &GraphInstance) -> Tokens {
    let mut t = Tokens::new();
    for &(u, v) in &g.edges {
        t.push(g.nodes[u].as_str());
        t.push(">");
        t.push(g.nodes[v].as_str());
        t.push(";");
    }
    for (i, &q) in g.query.iter().enumerate() {
        if i > 0 {
            t.push("?");
        }
        t.push(g.nodes[q].as_str());
    }
    if g.query.len() == 2 {
        t.push(";");
    }
    t
}

/// Inverse of [`serialize_graph`]. The label is recomputed by
/// [`connectivity_oracle`].
pub fn parse_graph(text: &str) -> Result<GraphInstance, TaskError> {
    let toks = tokenize_graph(text);
    let mut parts: Vec<Vec<&str>> = vec![Vec::new()];
    for t in toks.iter() {
        if t == ";" {
            parts.push(Vec::new());
        } else {
            parts.last_mut().expect("nonempty").push(t);
        }
    }
    let mut nodes: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut id = |name: &str| -> usize {
        *index.entry(name.to_string()).or_insert_with(|| {
            nodes.push(name.to_string());
            nodes.len() - 1
        })
    };
    let mut edges = Vec::new();
    let mut query = None;
    for p in parts.into_iter().filter(|p| !p.is_empty()) {
        let bad = || TaskError::Malformed(format!("graph clause {:?}", p.concat()));
        if query.is_some() {
            return Err(TaskError::Malformed("clause after query".into()));
        }
        match p.as_slice() {
            [u, ">", v] => {
                let (a, b) = (id(u), id(v));
                edges.push((a, b));
            }
            _ if p.len() % 2 == 1 && p.iter().skip(1).step_by(2).all(|&s| s == "?") => {
                let q: Vec<usize> = p.iter().step_by(2).map(|name| id(name)).collect();
                if q.len() < 2 {
                    return Err(bad());
                }
                query = Some(q);
            }
            _ => return Err(bad()),
        }
    }
    let query = query.ok_or_else(|| TaskError::Malformed("missing query".into()))?;
    let kind = if query.len() == 3 { GraphKind::ThreeCycle } else { GraphKind::Parsed };
    let mut g = GraphInstance { nodes, edges, query, label: 0, meta: GraphMeta { kind, n: 0, distance: None } };
    g.label = connectivity_oracle(&g);
    g.meta.distance = if g.query.len() == 2 { distance_oracle(&g) } else { None };
    Ok(g)
}

fn bfs(g: &GraphInstance, from: usize) -> Vec<Option<usize>> {
    let adj = g.successors();
    let mut dist = vec![None; g.nodes.len()];
    dist[from] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("visited");
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Directed shortest-path length from source to target.
pub fn distance_oracle(g: &GraphInstance) -> Option<usize> {
    if g.query.len() < 2 {
        return None;
    }
    bfs(g, g.source())[g.target()]
}

/// 1 iff every query vertex is reachable from the first one.
pub fn connectivity_oracle(g: &GraphInstance) -> u8 {
    let Some(&s) = g.query.first() else { return 0 };
    let dist = bfs(g, s);
    u8::from(g.query[1..].iter().all(|&t| dist[t].is_some()))
}

/// Predicts 0 iff the source has no out-edge or the target has no in-edge.
pub fn degree_shortcut(g: &GraphInstance) -> u8 {
    u8::from(g.out_degree(g.source()) > 0 && g.in_degree(g.target()) > 0)
}

/// Weakly connected component id of every vertex.
pub fn weak_components(g: &GraphInstance) -> Vec<usize> {
    let n = g.nodes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut y = x;
        while p[y] != r {
            let next = p[y];
            p[y] = r;
            y = next;
        }
        r
    }
    for &(u, v) in &g.edges {
        let (a, b) = (find(&mut parent, u), find(&mut parent, v));
        parent[a] = b;
    }
    (0..n).map(|x| find(&mut parent, x)).collect()
}

fn draw_names<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Result<Vec<String>, TaskError> {
    if count > NODE_POOL {
        return Err(TaskError::Pool { need: count, have: NODE_POOL });
    }
    Ok(sample(rng, NODE_POOL, count).into_iter().map(node_name).collect())
}

/// Vertices `0..Σsizes` split into consecutive directed cycles, edges shuffled.
fn cycles<R: Rng + ?Sized>(
    sizes: &[usize],
    query: (usize, usize),
    label: u8,
    meta: GraphMeta,
    rng: &mut R,
) -> Result<GraphInstance, TaskError> {
    let total: usize = sizes.iter().sum();
    let nodes = draw_names(total, rng)?;
    let mut edges = Vec::with_capacity(total);
    let mut start = 0;
    for &s in sizes {
        for i in 0..s {
            edges.push((start + i, start + (i + 1) % s));
        }
        start += s;
    }
    edges.shuffle(rng);
    Ok(GraphInstance { nodes, edges, query: vec![query.0, query.1], label, meta }.canonicalize())
}

fn pick_label<R: Rng + ?Sized>(label: Option<u8>, rng: &mut R) -> Result<u8, TaskError> {
    match label {
        None => Ok(u8::from(rng.gen_bool(0.5))),
        Some(l @ (0 | 1)) => Ok(l),
        Some(l) => Err(TaskError::Invalid(format!("label {l}"))),
    }
}

/// One directed 2n-cycle with the query `n` steps apart (label 1) or two
/// disjoint n-cycles with one query vertex in each (label 0).
pub fn gen_cycle<R: Rng + ?Sized>(n: usize, label: Option<u8>, rng: &mut R) -> Result<GraphInstance, TaskError> {
    if n < 2 {
        return Err(TaskError::Invalid(format!("cycle task needs n >= 2, got {n}")));
    }
    if 2 * n > NODE_POOL {
        return Err(TaskError::Pool { need: 2 * n, have: NODE_POOL });
    }
    let label = pick_label(label, rng)?;
    let meta = GraphMeta { kind: GraphKind::Cycle, n, distance: (label == 1).then_some(n) };
    let sizes = if label == 1 { vec![2 * n] } else { vec![n, n] };
    cycles(&sizes, (0, n), label, meta, rng)
}

/// Size drawn uniformly from `2..=n_max`, then [`gen_cycle`].
pub fn gen_mixed<R: Rng + ?Sized>(n_max: usize, rng: &mut R) -> Result<GraphInstance, TaskError> {
    if n_max < 2 {
        return Err(TaskError::Invalid(format!("n_max must be >= 2, got {n_max}")));
    }
    let n = rng.gen_range(2..=n_max);
    gen_cycle(n, None, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OodVariant {
    /// Label 0: cycles of `short` and `total - short`, source in the short
    /// one. Label 1: one `total`-cycle, query `short` apart.
    TrainUneven { total: usize, short: usize },
    /// The plain cycle task at size `n`.
    TestEven { n: usize },
    /// Query in a 2i-cycle at distance i, or in two disjoint i-cycles; the
    /// other `total - 2i` vertices form 2i-cycles (remainder merged into the last).
    Ood { i: usize, total: usize },
}

impl OodVariant {
    pub fn name(&self) -> String {
        match self {
            OodVariant::TrainUneven { total, short } => format!("train_uneven_{short}_{}", total - short),
            OodVariant::TestEven { n } => format!("test_even_{n}"),
            OodVariant::Ood { i, .. } => format!("ood_{i}"),
        }
    }
}

pub fn gen_ood_cycle<R: Rng + ?Sized>(variant: OodVariant, rng: &mut R) -> Result<GraphInstance, TaskError> {
    let label = pick_label(None, rng)?;
    match variant {
        OodVariant::TestEven { n } => gen_cycle(n, Some(label), rng).map(|mut g| {
            g.meta.kind = GraphKind::OodCycle;
            g
        }),
        OodVariant::TrainUneven { total, short } => {
            if short < 2 || total < 2 * short {
                return Err(TaskError::Invalid(format!("uneven split {short}/{total}")));
            }
            let meta = GraphMeta { kind: GraphKind::OodCycle, n: short, distance: (label == 1).then_some(short) };
            if label == 1 {
                cycles(&[total], (0, short), 1, meta, rng)
            } else {
                let target = short + rng.gen_range(0..total - short);
                cycles(&[short, total - short], (0, target), 0, meta, rng)
            }
        }
        OodVariant::Ood { i, total } => {
            if i < 2 || total < 2 * i {
                return Err(TaskError::Invalid(format!("ood_{i} with {total} vertices")));
            }
            let mut sizes = if label == 1 { vec![2 * i] } else { vec![i, i] };
            let rest = total - 2 * i;
            let full = rest / (2 * i);
            sizes.extend(std::iter::repeat(2 * i).take(full));
            let rem = rest - full * 2 * i;
            if rem > 0 {
                if full > 0 {
                    *sizes.last_mut().expect("nonempty") += rem;
                } else {
                    sizes.push(rem);
                }
            }
            let meta = GraphMeta { kind: GraphKind::OodCycle, n: i, distance: (label == 1).then_some(i) };
            cycles(&sizes, (0, i), label, meta, rng)
        }
    }
}

/// One 3n-cycle (probability 2/3) or three n-cycles, labelled level by level
/// and serialized in the fixed block order ending `a_0?b_0?c_0`.
pub fn gen_three_cycle<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<GraphInstance, TaskError> {
    if n < 2 {
        return Err(TaskError::Invalid(format!("three-cycle task needs n >= 2, got {n}")));
    }
    let single = rng.gen_range(0..3) < 2;
    // Position x in 0..3n; the three vertices at level i are i, n+i, 2n+i.
    let succ = |x: usize| if single { (x + 1) % (3 * n) } else { (x / n) * n + (x % n + 1) % n };
    let mut letter = vec![0usize; 3 * n];
    for i in 0..n {
        let mut perm = [0usize, 1, 2];
        perm.shuffle(rng);
        for (j, &l) in perm.iter().enumerate() {
            letter[j * n + i] = l;
        }
    }
    let name = |x: usize| format!("{}_{}", ["a", "b", "c"][letter[x]], x % n);
    let mut by_name = HashMap::new();
    for x in 0..3 * n {
        by_name.insert(name(x), x);
    }
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut id = |s: String, nodes: &mut Vec<String>| -> usize {
        *index.entry(s.clone()).or_insert_with(|| {
            nodes.push(s);
            nodes.len() - 1
        })
    };
    for i in 0..n {
        for l in ["a", "b", "c"] {
            let x = by_name[&format!("{l}_{i}")];
            let u = id(name(x), &mut nodes);
            let v = id(name(succ(x)), &mut nodes);
            edges.push((u, v));
        }
    }
    let query = ["a_0", "b_0", "c_0"].iter().map(|s| id(s.to_string(), &mut nodes)).collect();
    let meta = GraphMeta { kind: GraphKind::ThreeCycle, n, distance: None };
    Ok(GraphInstance { nodes, edges, query, label: u8::from(single), meta })
}

/// How label-0 query pairs of the random-graph task are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NegativePairs {
    /// A uniform source, then a uniform target it cannot reach along
    /// directed edges (the graph is resampled if it reaches everything).
    #[default]
    Unreachable,
    /// Source and target in different weakly connected components.
    WeakComponents,
}

/// [`gen_random_graph_with`] using [`NegativePairs::Unreachable`].
pub fn gen_random_graph<R: Rng + ?Sized>(nodes: usize, edges: usize, rng: &mut R) -> Result<GraphInstance, TaskError> {
    gen_random_graph_with(nodes, edges, NegativePairs::default(), rng)
}

/// 24-vertex style random digraph with a balanced query: with probability
/// 1/2 a label-0 pair chosen per `negatives`, otherwise a pair at directed
/// distance d uniform in 1..=4 (label 1).
pub fn gen_random_graph_with<R: Rng + ?Sized>(
    nodes: usize,
    edges: usize,
    negatives: NegativePairs,
    rng: &mut R,
) -> Result<GraphInstance, TaskError> {
    const RETRIES: usize = 1000;
    if nodes < 2 || edges > nodes * (nodes - 1) {
        return Err(TaskError::Invalid(format!("{edges} edges on {nodes} vertices")));
    }
    let label = u8::from(rng.gen_bool(0.5));
    let want_d = rng.gen_range(1..=4usize);
    for _ in 0..RETRIES {
        let names = draw_names(nodes, rng)?;
        let pairs: Vec<(usize, usize)> = sample(rng, nodes * (nodes - 1), edges)
            .into_iter()
            .map(|k| {
                let (u, r) = (k / (nodes - 1), k % (nodes - 1));
                (u, if r >= u { r + 1 } else { r })
            })
            .collect();
        let mut g = GraphInstance {
            nodes: names,
            edges: pairs,
            query: vec![0, 0],
            label,
            meta: GraphMeta { kind: GraphKind::RandomGraph, n: nodes, distance: None },
        };
        let candidates: Vec<(usize, usize)> = if label == 0 {
            match negatives {
                NegativePairs::WeakComponents => {
                    let comp = weak_components(&g);
                    (0..nodes).flat_map(|s| (0..nodes).map(move |t| (s, t))).filter(|&(s, t)| comp[s] != comp[t]).collect()
                }
                NegativePairs::Unreachable => {
                    let s = rng.gen_range(0..nodes);
                    let d = bfs(&g, s);
                    (0..nodes).filter(|&t| d[t].is_none()).map(|t| (s, t)).collect()
                }
            }
        } else {
            let mut c = Vec::new();
            for s in 0..nodes {
                let d = bfs(&g, s);
                c.extend((0..nodes).filter(|&t| d[t] == Some(want_d)).map(|t| (s, t)));
            }
            c
        };
        if let Some(&(s, t)) = candidates.choose(rng) {
            g.query = vec![s, t];
            g.meta.distance = (label == 1).then_some(want_d);
            g.edges.shuffle(rng);
            return Ok(g.canonicalize());
        }
    }
    Err(TaskError::RetryExhausted(RETRIES))
}
