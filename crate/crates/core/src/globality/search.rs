use std::cmp::Ordering;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mi::plugin_mi_joint;
use super::{entropy_bits, exact_mi, DiscreteJoint, GlobalityError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiMode {
    Exact,
    /// Miller–Madow corrected plug-in MI on `n_samples` draws.
    Plugin { n_samples: usize, seed: u64 },
}

impl MiMode {
    pub fn name(self) -> &'static str {
        match self {
            MiMode::Exact => "exact",
            MiMode::Plugin { .. } => "plugin",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchStrategy {
    Exhaustive,
    /// Greedy beam of the given width; results are heuristic for k ≥ 2.
    Beam(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchConfig {
    pub k_max: usize,
    /// Absolute threshold in bits.
    pub threshold: f64,
    pub include_histogram: bool,
    pub mode: MiMode,
    pub strategy: SearchStrategy,
    /// Cap on subset evaluations; exceeding it truncates the report.
    pub max_evals: Option<u64>,
    pub threads: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            k_max: 4,
            threshold: 0.01,
            include_histogram: true,
            mode: MiMode::Exact,
            strategy: SearchStrategy::Exhaustive,
            max_evals: None,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KResult {
    pub k: usize,
    pub best_mi: f64,
    /// Lexicographically first subset attaining `best_mi` (0-based positions).
    pub witness: Vec<usize>,
    pub evaluated: u64,
    pub heuristic: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalityReport {
    pub per_k: Vec<KResult>,
    /// Smallest k reaching the threshold; `None` means "> k_max" (or unknown if incomplete).
    pub verdict: Option<usize>,
    pub mode: MiMode,
    /// Sample budget in plug-in mode.
    pub samples: Option<u64>,
    pub incomplete: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub t: usize,
    pub entropy: f64,
    /// 0 for (near-)deterministic steps; `None` if no subset up to k_max reaches the threshold.
    pub k: Option<usize>,
    pub witness: Vec<usize>,
    pub best_mi: f64,
    pub incomplete: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArReport {
    pub steps: Vec<StepReport>,
    /// Max over steps; `None` if some step exceeds k_max.
    pub overall: Option<usize>,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

/// All k-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        let Some(i) = (0..k).rev().find(|&i| c[i] != i + n - k) else {
            return out;
        };
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// Higher MI first, then lexicographic subset order.
fn better(a: (f64, &[usize]), b: (f64, &[usize])) -> bool {
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => a.1 < b.1,
    }
}

struct Scorer<'a> {
    dist: &'a DiscreteJoint,
    include_histogram: bool,
    exact: bool,
}

impl Scorer<'_> {
    fn score(&self, s: &[usize]) -> Result<f64> {
        if self.exact {
            exact_mi(self.dist, s, self.include_histogram)
        } else {
            Ok(plugin_mi_joint(self.dist, s, self.include_histogram)?.corrected)
        }
    }

    fn score_all(&self, subsets: &[Vec<usize>], threads: usize) -> Result<Vec<f64>> {
        if threads <= 1 || subsets.len() < 64 {
            return subsets.iter().map(|s| self.score(s)).collect();
        }
        let chunk = subsets.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = subsets
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(|s| self.score(s)).collect::<Result<Vec<f64>>>()))
                .collect();
            let mut out = Vec::with_capacity(subsets.len());
            for h in handles {
                out.extend(h.join().expect("scoring thread panicked")?);
            }
            Ok(out)
        })
    }
}

/// Smallest k such that some k positions (plus the histogram, if enabled)
/// carry at least `threshold` bits about `Y`.
pub fn globality_search(dist: &DiscreteJoint, cfg: &SearchConfig) -> Result<GlobalityReport> {
    if !(cfg.threshold > 0.0) {
        return Err(GlobalityError::Invalid(format!("threshold must be positive, got {}", cfg.threshold)));
    }
    if let SearchStrategy::Beam(0) = cfg.strategy {
        return Err(GlobalityError::Invalid("beam width must be >= 1".into()));
    }
    let sampled;
    let (target, samples) = match cfg.mode {
        MiMode::Exact => {
            if dist.is_empirical() {
                return Err(GlobalityError::NonEnumerable);
            }
            (dist, None)
        }
        MiMode::Plugin { n_samples, seed } => {
            if dist.is_empirical() {
                (dist, Some(dist.total_weight()))
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                sampled = DiscreteJoint::from_sampler(|r| dist.sample(r), n_samples, &mut rng)?;
                (&sampled, Some(n_samples as u64))
            }
        }
    };
    let scorer = Scorer { dist: target, include_histogram: cfg.include_histogram, exact: cfg.mode == MiMode::Exact };
    let width = target.width();
    let mut report = GlobalityReport { per_k: Vec::new(), verdict: None, mode: cfg.mode, samples, incomplete: false };
    let mut spent: u64 = 0;
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for k in 1..=cfg.k_max.min(width) {
        let (candidates, heuristic) = match cfg.strategy {
            SearchStrategy::Beam(_) if k > 1 => {
                let mut c: Vec<Vec<usize>> = frontier
                    .iter()
                    .flat_map(|f| {
                        (0..width).filter(move |j| !f.contains(j)).map(move |j| {
                            let mut s = f.clone();
                            s.push(j);
                            s.sort_unstable();
                            s
                        })
                    })
                    .collect();
                c.sort();
                c.dedup();
                (c, true)
            }
            _ => {
                let need = binomial(width, k);
                if cfg.max_evals.is_some_and(|cap| spent as u128 + need > cap as u128) {
                    report.incomplete = true;
                    break;
                }
                (combinations(width, k), false)
            }
        };
        if cfg.max_evals.is_some_and(|cap| spent + candidates.len() as u64 > cap) {
            report.incomplete = true;
            break;
        }
        let scores = scorer.score_all(&candidates, cfg.threads)?;
        spent += candidates.len() as u64;
        let mut best = 0;
        for i in 1..candidates.len() {
            if better((scores[i], &candidates[i]), (scores[best], &candidates[best])) {
                best = i;
            }
        }
        let mut result = KResult {
            k,
            best_mi: scores[best],
            witness: candidates[best].clone(),
            evaluated: candidates.len() as u64,
            heuristic,
        };
        // Guard against rounding: a superset of the previous witness is never worse.
        if let Some(prev) = report.per_k.last() {
            if result.best_mi < prev.best_mi {
                let mut w = prev.witness.clone();
                let extra = (0..width).find(|j| !w.contains(j)).expect("k <= width");
                w.push(extra);
                w.sort_unstable();
                result.best_mi = prev.best_mi;
                result.witness = w;
            }
        }
        if let SearchStrategy::Beam(b) = cfg.strategy {
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            order.sort_by(|&i, &j| {
                if better((scores[i], &candidates[i]), (scores[j], &candidates[j])) {
                    Ordering::Less
                } else if better((scores[j], &candidates[j]), (scores[i], &candidates[i])) {
                    Ordering::Greater
                } else {
                    Ordering::Equal
                }
            });
            frontier = order.into_iter().take(b).map(|i| candidates[i].clone()).collect();
            if !frontier.contains(&result.witness) {
                frontier[0] = result.witness.clone();
            }
        }
        let reached = result.best_mi >= cfg.threshold;
        report.per_k.push(result);
        if reached {
            report.verdict = Some(k);
            break;
        }
    }
    Ok(report)
}

/// Per-step globality of `(X, Y_<t) → Y_t`; steps whose target entropy is
/// below the threshold count as k = 0.
pub fn autoregressive_globality(steps: &[DiscreteJoint], cfg: &SearchConfig) -> Result<ArReport> {
    let mut out = Vec::with_capacity(steps.len());
    for (t, dist) in steps.iter().enumerate() {
        let step_cfg = match cfg.mode {
            MiMode::Plugin { n_samples, seed } => SearchConfig {
                mode: MiMode::Plugin { n_samples, seed: seed.wrapping_add(t as u64) },
                ..cfg.clone()
            },
            MiMode::Exact => cfg.clone(),
        };
        let entropy = entropy_bits(dist);
        if entropy < cfg.threshold {
            out.push(StepReport { t, entropy, k: Some(0), witness: Vec::new(), best_mi: 0.0, incomplete: false });
            continue;
        }
        let r = globality_search(dist, &step_cfg)?;
        let last = r.per_k.last();
        out.push(StepReport {
            t,
            entropy,
            k: r.verdict,
            witness: last.map(|x| x.witness.clone()).unwrap_or_default(),
            best_mi: last.map_or(0.0, |x| x.best_mi),
            incomplete: r.incomplete,
        });
    }
    let overall = out.iter().try_fold(0, |acc, s| s.k.map(|k| acc.max(k)));
    Ok(ArReport { steps: out, overall })
}

/// CSV with header `k,best_mi_bits,witness,mode,samples`; witness positions
/// are space separated.
pub fn write_report_csv<W: Write>(mut w: W, report: &GlobalityReport) -> Result<()> {
    writeln!(w, "k,best_mi_bits,witness,mode,samples")?;
    for r in &report.per_k {
        let witness: Vec<String> = r.witness.iter().map(usize::to_string).collect();
        writeln!(
            w,
            "{},{:.9},{},{},{}",
            r.k,
            r.best_mi,
            witness.join(" "),
            report.mode.name(),
            report.samples.unwrap_or(0)
        )?;
    }
    Ok(())
}
