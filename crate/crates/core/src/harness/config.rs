use std::fmt;
use std::str::FromStr;

use super::optim::AdamWConfig;
use super::{HarnessError, Result};
use crate::scratchpad::DecodeMode;
use crate::tasks::AdditionFormat;

/// A task distribution, written `kind:key=value,...` in config files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskSpec {
    Cycle { n: usize },
    /// Sizes uniform in `2..=n_max`.
    Mixed { n_max: usize },
    /// Uneven training split: a `short`-cycle against a `total - short` one.
    Uneven { total: usize, short: usize },
    /// Out-of-distribution family at distance `i` among `total` vertices.
    Ood { i: usize, total: usize },
    ThreeCycle { n: usize },
    RandomGraph { nodes: usize, edges: usize },
    /// `min..=max` bits scattered over `d_amb` slots.
    Parity { min: usize, max: usize, d_amb: usize },
    HalfParity { n: usize },
    /// Operand lengths drawn independently from `min..=max`.
    Addition { format: AdditionFormat, min: usize, max: usize, d_amb: usize },
}

impl TaskSpec {
    pub fn is_graph(&self) -> bool {
        matches!(
            self,
            TaskSpec::Cycle { .. }
                | TaskSpec::Mixed { .. }
                | TaskSpec::Uneven { .. }
                | TaskSpec::Ood { .. }
                | TaskSpec::ThreeCycle { .. }
                | TaskSpec::RandomGraph { .. }
        )
    }

    /// Cycle-family distributions whose instances admit the walk scratchpad.
    pub fn has_walk(&self) -> bool {
        matches!(self, TaskSpec::Cycle { .. } | TaskSpec::Mixed { .. } | TaskSpec::Uneven { .. } | TaskSpec::Ood { .. })
    }

    /// Binary-label tasks answer with exactly one token.
    pub fn fixed_answer_len(&self) -> Option<usize> {
        match self {
            TaskSpec::Addition { .. } => None,
            _ => Some(1),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(format!("task {self}: {m}")));
        match *self {
            TaskSpec::Cycle { n } | TaskSpec::ThreeCycle { n } if n < 2 => bad("n must be >= 2".into()),
            TaskSpec::Mixed { n_max } if n_max < 2 => bad("n_max must be >= 2".into()),
            TaskSpec::Uneven { total, short } if short < 2 || total < 2 * short => bad("need 2 <= short <= total/2".into()),
            TaskSpec::Ood { i, total } if i < 2 || total < 2 * i => bad("need 2 <= i <= total/2".into()),
            TaskSpec::Parity { min, max, d_amb } if min == 0 || min > max || max > d_amb => {
                bad("need 1 <= min <= max <= d_amb".into())
            }
            TaskSpec::HalfParity { n } if n < 2 || n % 2 == 1 => bad("n must be even and >= 2".into()),
            TaskSpec::Addition { min, max, d_amb, .. } if min == 0 || min > max || max > d_amb => {
                bad("need 1 <= min <= max <= d_amb".into())
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskSpec::Cycle { n } => write!(f, "cycle:n={n}"),
            TaskSpec::Mixed { n_max } => write!(f, "mixed:n_max={n_max}"),
            TaskSpec::Uneven { total, short } => write!(f, "uneven:total={total},short={short}"),
            TaskSpec::Ood { i, total } => write!(f, "ood:i={i},total={total}"),
            TaskSpec::ThreeCycle { n } => write!(f, "three_cycle:n={n}"),
            TaskSpec::RandomGraph { nodes, edges } => write!(f, "random_graph:nodes={nodes},edges={edges}"),
            TaskSpec::Parity { min, max, d_amb } => write!(f, "parity:min={min},max={max},d_amb={d_amb}"),
            TaskSpec::HalfParity { n } => write!(f, "half_parity:n={n}"),
            TaskSpec::Addition { format, min, max, d_amb } => {
                write!(f, "add_{}:min={min},max={max},d_amb={d_amb}", format.name())
            }
        }
    }
}

impl FromStr for TaskSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        let mut fields: Vec<(&str, usize)> = Vec::new();
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("task field {part:?} is not key=value")))?;
            let v = v.trim().parse().map_err(|_| HarnessError::Config(format!("task field {k}: bad integer {v:?}")))?;
            fields.push((k.trim(), v));
        }
        let get = |key: &str| {
            fields
                .iter()
                .find(|(k, _)| *k == key)
                .map(|&(_, v)| v)
                .ok_or_else(|| HarnessError::Config(format!("task {kind}: missing field {key}")))
        };
        let allowed: &[&str] = match kind {
            "cycle" | "three_cycle" | "half_parity" => &["n"],
            "mixed" => &["n_max"],
            "uneven" => &["total", "short"],
            "ood" => &["i", "total"],
            "random_graph" => &["nodes", "edges"],
            "parity" | "add_spaces" | "add_shift" => &["min", "max", "d_amb"],
            _ => return Err(HarnessError::Config(format!("unknown task kind {kind:?}"))),
        };
        if let Some((k, _)) = fields.iter().find(|(k, _)| !allowed.contains(k)) {
            return Err(HarnessError::Config(format!("task {kind}: unknown field {k}")));
        }
        let spec = match kind {
            "cycle" => TaskSpec::Cycle { n: get("n")? },
            "three_cycle" => TaskSpec::ThreeCycle { n: get("n")? },
            "half_parity" => TaskSpec::HalfParity { n: get("n")? },
            "mixed" => TaskSpec::Mixed { n_max: get("n_max")? },
            "uneven" => TaskSpec::Uneven { total: get("total")?, short: get("short")? },
            "ood" => TaskSpec::Ood { i: get("i")?, total: get("total")? },
            "random_graph" => TaskSpec::RandomGraph { nodes: get("nodes")?, edges: get("edges")? },
            "parity" => TaskSpec::Parity { min: get("min")?, max: get("max")?, d_amb: get("d_amb")? },
            _ => TaskSpec::Addition {
                format: if kind == "add_shift" { AdditionFormat::Shift } else { AdditionFormat::Spaces },
                min: get("min")?,
                max: get("max")?,
                d_amb: get("d_amb")?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScratchpadMode {
    /// Question then answer; loss on the answer.
    None,
    /// Question, the joined scratchpad and `<EOS>` in one causal sequence.
    Flat,
    /// Duplicated inductive encoding.
    Inductive,
}

impl ScratchpadMode {
    pub fn name(self) -> &'static str {
        match self {
            ScratchpadMode::None => "none",
            ScratchpadMode::Flat => "flat",
            ScratchpadMode::Inductive => "inductive",
        }
    }
}

impl FromStr for ScratchpadMode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ScratchpadMode::None),
            "flat" => Ok(ScratchpadMode::Flat),
            "inductive" => Ok(ScratchpadMode::Inductive),
            _ => Err(HarnessError::Config(format!("scratchpad must be none|flat|inductive, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataMode {
    Fresh,
    /// A fixed training set of this many samples, drawn with replacement.
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// Stage `i` trains on the uniform mixture of sizes `2..=i`.
    Cumulative,
    /// Stage `i` trains on size `i` only.
    Forgetful,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumSpec {
    pub schedule: Schedule,
    pub n_max: usize,
    pub threshold: f64,
    /// Per-stage step budget; `None` lets a stage use whatever remains.
    pub stage_steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub scratchpad: ScratchpadMode,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Defaults to `4 * d_model`.
    pub d_ff: Option<usize>,
    /// `None` sizes the context from a probe of the configured distributions.
    pub max_context: Option<usize>,
    pub dropout: f64,
    pub tie_output_head: bool,
    pub optim: AdamWConfig,
    pub batch_size: usize,
    /// Micro-batches per step; gradients are summed in shard order.
    pub grad_accum: usize,
    pub steps: usize,
    pub eval_interval: usize,
    pub eval_size: usize,
    pub eval_batch: usize,
    /// Named eval sets; empty means one set `test` drawn from `task`.
    pub evals: Vec<(String, TaskSpec)>,
    pub seed: u64,
    pub data: DataMode,
    pub loss_on_question: bool,
    pub decode: DecodeMode,
    pub curriculum: Option<CurriculumSpec>,
    /// When false, `wall_ms` is written as 0 so metrics are reproducible.
    pub wall_clock: bool,
    /// Abort after this many consecutive non-finite losses.
    pub nonfinite_abort: usize,
    /// Stop once the first eval set reaches this accuracy.
    pub stop_accuracy: Option<f64>,
    pub threads: Option<usize>,
    pub save_checkpoint: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            task: TaskSpec::Cycle { n: 2 },
            scratchpad: ScratchpadMode::None,
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: None,
            max_context: None,
            dropout: 0.0,
            tie_output_head: false,
            optim: AdamWConfig::default(),
            batch_size: 256,
            grad_accum: 1,
            steps: 1000,
            eval_interval: 100,
            eval_size: 512,
            eval_batch: 256,
            evals: Vec::new(),
            seed: 0,
            data: DataMode::Fresh,
            loss_on_question: false,
            decode: DecodeMode::Truncated,
            curriculum: None,
            wall_clock: true,
            nonfinite_abort: 20,
            stop_accuracy: None,
            threads: None,
            save_checkpoint: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| HarnessError::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| HarnessError::Config(format!("expected key=value, got {l:?}")))
        })
        .collect()
}

impl TrainConfig {
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        self.validate()
    }

    /// Sets one key. `eval.<name>` adds or replaces an eval set.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(name) = key.strip_prefix("eval.") {
            if name.is_empty() || name.contains(',') {
                return Err(HarnessError::Config(format!("bad eval set name {name:?}")));
            }
            let spec: TaskSpec = value.parse()?;
            match self.evals.iter_mut().find(|(n, _)| n == name) {
                Some(slot) => slot.1 = spec,
                None => self.evals.push((name.to_string(), spec)),
            }
            return Ok(());
        }
        let opt_usize = |v: &str| -> Result<Option<usize>> {
            if v == "auto" || v == "none" {
                Ok(None)
            } else {
                parse(key, v).map(Some)
            }
        };
        match key {
            "task" => self.task = value.parse()?,
            "scratchpad" => self.scratchpad = value.parse()?,
            "n_layers" => self.n_layers = parse(key, value)?,
            "n_heads" => self.n_heads = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "d_ff" => self.d_ff = opt_usize(value)?,
            "max_context" => self.max_context = opt_usize(value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "tie_output_head" => self.tie_output_head = parse_bool(key, value)?,
            "lr" => self.optim.lr = parse(key, value)?,
            "beta1" => self.optim.beta1 = parse(key, value)?,
            "beta2" => self.optim.beta2 = parse(key, value)?,
            "eps" => self.optim.eps = parse(key, value)?,
            "weight_decay" => self.optim.weight_decay = parse(key, value)?,
            "warmup" => self.optim.warmup = parse(key, value)?,
            "clip" => self.optim.clip = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "grad_accum" => self.grad_accum = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "eval_interval" => self.eval_interval = parse(key, value)?,
            "eval_size" => self.eval_size = parse(key, value)?,
            "eval_batch" => self.eval_batch = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "data" => {
                self.data = match value {
                    "fresh" => DataMode::Fresh,
                    v => match v.strip_prefix("fixed:") {
                        Some(n) => DataMode::Fixed(parse(key, n)?),
                        None => return Err(HarnessError::Config(format!("data must be fresh|fixed:<n>, got {v:?}"))),
                    },
                }
            }
            "loss_on_question" => self.loss_on_question = parse_bool(key, value)?,
            "decode" => {
                self.decode = match value {
                    "truncated" => DecodeMode::Truncated,
                    "masked" => DecodeMode::Masked,
                    _ => return Err(HarnessError::Config(format!("decode must be truncated|masked, got {value:?}"))),
                }
            }
            "curriculum" => {
                self.curriculum = match value {
                    "none" => None,
                    "cumulative" | "forgetful" => {
                        let schedule = if value == "cumulative" { Schedule::Cumulative } else { Schedule::Forgetful };
                        let prev = self.curriculum.take();
                        Some(CurriculumSpec {
                            schedule,
                            n_max: prev.as_ref().map_or(5, |c| c.n_max),
                            threshold: prev.as_ref().map_or(0.95, |c| c.threshold),
                            stage_steps: prev.and_then(|c| c.stage_steps),
                        })
                    }
                    _ => return Err(HarnessError::Config(format!("curriculum must be none|cumulative|forgetful, got {value:?}"))),
                }
            }
            "curriculum_n_max" | "curriculum_threshold" | "stage_steps" => {
                let c = self
                    .curriculum
                    .as_mut()
                    .ok_or_else(|| HarnessError::Config(format!("{key} needs curriculum set first")))?;
                match key {
                    "curriculum_n_max" => c.n_max = parse(key, value)?,
                    "curriculum_threshold" => c.threshold = parse(key, value)?,
                    _ => c.stage_steps = opt_usize(value)?,
                }
            }
            "wall_clock" => self.wall_clock = parse_bool(key, value)?,
            "nonfinite_abort" => self.nonfinite_abort = parse(key, value)?,
            "stop_accuracy" => {
                self.stop_accuracy = if value == "none" { None } else { Some(parse(key, value)?) };
            }
            "threads" => self.threads = opt_usize(value)?,
            "save_checkpoint" => self.save_checkpoint = parse_bool(key, value)?,
            _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if self.eval_interval == 0 || self.eval_size == 0 || self.eval_batch == 0 {
            return bad("eval_interval, eval_size and eval_batch must be >= 1");
        }
        if self.grad_accum == 0 || self.grad_accum > self.batch_size {
            return bad("grad_accum must be in 1..=batch_size");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if let Some(c) = &self.curriculum {
            if c.n_max < 2 {
                return bad("curriculum_n_max must be >= 2");
            }
            if !matches!(self.task, TaskSpec::Cycle { .. }) {
                return bad("curriculum runs on the cycle task");
            }
        }
        for spec in std::iter::once(&self.task).chain(self.evals.iter().map(|(_, s)| s)) {
            match (self.scratchpad, spec) {
                (ScratchpadMode::None, _) => {}
                (_, TaskSpec::ThreeCycle { .. } | TaskSpec::RandomGraph { .. }) => {
                    return Err(HarnessError::Config(format!("{spec} has no scratchpad")));
                }
                _ => {}
            }
            if spec.is_graph() != self.task.is_graph() {
                return Err(HarnessError::Config(format!("eval {spec} and task {} need different vocabularies", self.task)));
            }
        }
        self.optim.validate()
    }

    /// Eval sets with the default applied.
    pub fn eval_sets(&self) -> Vec<(String, TaskSpec)> {
        if self.evals.is_empty() {
            vec![("test".to_string(), self.task.clone())]
        } else {
            self.evals.clone()
        }
    }

    /// Canonical, fully resolved key=value text.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        let auto = |x: Option<usize>| x.map_or("auto".to_string(), |v| v.to_string());
        put("task", self.task.to_string());
        put("scratchpad", self.scratchpad.name().into());
        put("n_layers", self.n_layers.to_string());
        put("n_heads", self.n_heads.to_string());
        put("d_model", self.d_model.to_string());
        put("d_ff", auto(self.d_ff));
        put("max_context", auto(self.max_context));
        put("dropout", self.dropout.to_string());
        put("tie_output_head", self.tie_output_head.to_string());
        put("lr", self.optim.lr.to_string());
        put("beta1", self.optim.beta1.to_string());
        put("beta2", self.optim.beta2.to_string());
        put("eps", self.optim.eps.to_string());
        put("weight_decay", self.optim.weight_decay.to_string());
        put("warmup", self.optim.warmup.to_string());
        put("clip", self.optim.clip.to_string());
        put("batch_size", self.batch_size.to_string());
        put("grad_accum", self.grad_accum.to_string());
        put("steps", self.steps.to_string());
        put("eval_interval", self.eval_interval.to_string());
        put("eval_size", self.eval_size.to_string());
        put("eval_batch", self.eval_batch.to_string());
        for (name, spec) in &self.evals {
            put(&format!("eval.{name}"), spec.to_string());
        }
        put("seed", self.seed.to_string());
        put(
            "data",
            match self.data {
                DataMode::Fresh => "fresh".into(),
                DataMode::Fixed(n) => format!("fixed:{n}"),
            },
        );
        put("loss_on_question", self.loss_on_question.to_string());
        put(
            "decode",
            match self.decode {
                DecodeMode::Truncated => "truncated".into(),
                DecodeMode::Masked => "masked".into(),
            },
        );
        match &self.curriculum {
            None => put("curriculum", "none".into()),
            Some(c) => {
                put(
                    "curriculum",
                    match c.schedule {
                        Schedule::Cumulative => "cumulative".into(),
                        Schedule::Forgetful => "forgetful".into(),
                    },
                );
                put("curriculum_n_max", c.n_max.to_string());
                put("curriculum_threshold", c.threshold.to_string());
                put("stage_steps", auto(c.stage_steps));
            }
        }
        put("wall_clock", self.wall_clock.to_string());
        put("nonfinite_abort", self.nonfinite_abort.to_string());
        put("stop_accuracy", self.stop_accuracy.map_or("none".into(), |a| a.to_string()));
        put("threads", auto(self.threads));
        put("save_checkpoint", self.save_checkpoint.to_string());
        out
    }
}
