use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{DataMode, ScratchpadMode, TaskSpec, TrainConfig};
use super::optim::{optimizer_step, AdamWState};
use super::task::{draw, encode_example, probe, vocab_for, Example, Probe};
use super::{derive_seed, thread_cap, HarnessError, Result};
use crate::model::{bind_params, init_model, save_checkpoint, sequence_loss, ModelConfig, ParameterStore, TrainSeq};
use crate::numerics::{Tape, Tensor};
use crate::scratchpad::{flat_decode_batch, inductive_decode_batch, AnswerRule, DecodeLimits, DecodeMode, DecodeOutcome};
use crate::tasks::Vocab;

pub const METRICS_HEADER: &str = "step,train_loss,eval_name,accuracy,wall_ms";

const PROBE_DRAWS: usize = 256;

/// A fixed, oracle-checked evaluation set.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub name: String,
    pub spec: TaskSpec,
    pub examples: Vec<Example>,
}

impl EvalSet {
    pub fn build(name: &str, spec: &TaskSpec, mode: ScratchpadMode, size: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let examples = (0..size).map(|_| draw(spec, mode, &mut rng)).collect::<Result<Vec<_>>>()?;
        Ok(Self { name: name.to_string(), spec: spec.clone(), examples })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EvalRecord {
    pub question: String,
    pub expected: String,
    pub predicted: Option<String>,
    pub correct: bool,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub name: String,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub records: Vec<EvalRecord>,
}

/// Everything evaluation needs besides the parameters.
#[derive(Clone, Debug)]
pub struct EvalContext {
    pub vocab: Vocab,
    pub model: ModelConfig,
    pub mode: ScratchpadMode,
    pub decode: DecodeMode,
    pub limits: DecodeLimits,
    /// Token budget for flat decoding.
    pub max_new: usize,
    pub batch: usize,
    pub threads: usize,
}

fn decode_chunk(params: &ParameterStore<f32>, ctx: &EvalContext, set: &EvalSet, chunk: &[Example]) -> Result<Vec<DecodeOutcome>> {
    let inputs: Vec<_> = chunk.iter().map(|e| e.input.clone()).collect();
    let first = &chunk[0];
    Ok(match ctx.mode {
        ScratchpadMode::Inductive => inductive_decode_batch(
            params,
            &ctx.model,
            &ctx.vocab,
            &inputs,
            first.use_start,
            ctx.limits,
            first.rule,
            ctx.decode,
        )?,
        ScratchpadMode::Flat => flat_decode_batch(params, &ctx.model, &ctx.vocab, &inputs, ctx.max_new, true, first.rule)?,
        ScratchpadMode::None => match set.spec.fixed_answer_len() {
            Some(len) => flat_decode_batch(params, &ctx.model, &ctx.vocab, &inputs, len, false, AnswerRule::Whole)?,
            None => flat_decode_batch(params, &ctx.model, &ctx.vocab, &inputs, ctx.max_new, true, AnswerRule::Whole)?,
        },
    })
}

/// Greedy (or inductive) decoding of every example; accuracy is the exact
/// match rate of the extracted answer, and decode failures count as wrong.
pub fn evaluate(params: &ParameterStore<f32>, ctx: &EvalContext, set: &EvalSet) -> Result<EvalResult> {
    let chunks: Vec<&[Example]> = set.examples.chunks(ctx.batch.max(1)).collect();
    let outcomes: Vec<DecodeOutcome> = if ctx.threads <= 1 || chunks.len() <= 1 {
        let mut out = Vec::with_capacity(set.examples.len());
        for c in &chunks {
            out.extend(decode_chunk(params, ctx, set, c)?);
        }
        out
    } else {
        let per = chunks.len().div_ceil(ctx.threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunks
                .chunks(per)
                .map(|group| {
                    scope.spawn(move || -> Result<Vec<DecodeOutcome>> {
                        let mut out = Vec::new();
                        for c in group {
                            out.extend(decode_chunk(params, ctx, set, c)?);
                        }
                        Ok(out)
                    })
                })
                .collect();
            let mut out = Vec::with_capacity(set.examples.len());
            for h in handles {
                out.extend(h.join().expect("evaluation thread panicked")?);
            }
            Ok::<_, HarnessError>(out)
        })?
    };
    let records: Vec<EvalRecord> = set
        .examples
        .iter()
        .zip(outcomes)
        .map(|(ex, o)| {
            let correct = o.answer.as_ref() == Some(&ex.sample.answer);
            EvalRecord {
                question: ex.input.render(),
                expected: ex.sample.answer.render(),
                predicted: o.answer.map(|a| a.render()),
                correct,
                failure: o.failure,
            }
        })
        .collect();
    let correct = records.iter().filter(|r| r.correct).count();
    let total = records.len();
    Ok(EvalResult { name: set.name.clone(), accuracy: correct as f64 / total.max(1) as f64, correct, total, records })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub train_loss: f64,
    pub eval_name: String,
    pub accuracy: f64,
    pub wall_ms: u64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!("{},{:.6},{},{:.6},{}", self.step, self.train_loss, self.eval_name, self.accuracy, self.wall_ms)
    }
}

/// Output directory and the verbatim config text to snapshot there.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub config_text: String,
}

impl RunDir {
    pub fn new(path: impl Into<PathBuf>, config_text: impl Into<String>) -> Self {
        Self { path: path.into(), config_text: config_text.into() }
    }

    pub(crate) fn create(&self, cfg: &TrainConfig) -> Result<()> {
        fs::create_dir_all(&self.path)?;
        fs::write(self.path.join("config.txt"), &self.config_text)?;
        fs::write(self.path.join("config.resolved.txt"), cfg.to_kv())?;
        fs::write(self.path.join("metrics.csv"), format!("{METRICS_HEADER}\n"))?;
        Ok(())
    }

    pub(crate) fn append_metrics(&self, rows: &[MetricsRow]) -> Result<()> {
        let mut f = fs::OpenOptions::new().append(true).open(self.path.join("metrics.csv"))?;
        for r in rows {
            writeln!(f, "{}", r.to_csv())?;
        }
        Ok(())
    }
}

/// Resolved model, vocabulary and evaluation settings for a config.
#[derive(Clone, Debug)]
pub struct Session {
    pub cfg: TrainConfig,
    pub vocab: Vocab,
    pub model: ModelConfig,
    pub probe: Probe,
    pub eval_ctx: EvalContext,
}

impl Session {
    /// Probes every configured distribution (plus `extra`) to size the context
    /// and decoding limits.
    pub fn prepare(cfg: &TrainConfig, extra: &[TaskSpec]) -> Result<Self> {
        cfg.validate()?;
        let vocab = vocab_for(&cfg.task);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "probe"));
        let mut p = Probe::default();
        let specs: Vec<TaskSpec> = std::iter::once(cfg.task.clone())
            .chain(cfg.eval_sets().into_iter().map(|(_, s)| s))
            .chain(extra.iter().cloned())
            .collect();
        for spec in &specs {
            p = p.merge(probe(&vocab, spec, cfg.scratchpad, PROBE_DRAWS, &mut rng)?);
        }
        let need = p.encoded.max(p.decode + 2);
        let max_context = cfg.max_context.unwrap_or_else(|| (need + need / 4 + 4).div_ceil(16) * 16);
        let mut model = ModelConfig::new(cfg.n_layers, cfg.n_heads, cfg.d_model, vocab.len(), max_context);
        if let Some(d_ff) = cfg.d_ff {
            model.d_ff = d_ff;
        }
        model.dropout = cfg.dropout;
        model.tie_output_head = cfg.tie_output_head;
        model.validate()?;
        let eval_ctx = EvalContext {
            vocab: vocab.clone(),
            model: model.clone(),
            mode: cfg.scratchpad,
            decode: cfg.decode,
            limits: DecodeLimits { max_states: p.max_states * 2 + 2, max_state_len: p.max_state_len + 4 },
            max_new: p.max_flat + p.max_flat / 2 + 4,
            batch: cfg.eval_batch,
            threads: thread_cap(cfg.threads),
        };
        Ok(Self { cfg: cfg.clone(), vocab, model, probe: p, eval_ctx })
    }

    pub fn eval_set(&self, name: &str, spec: &TaskSpec) -> Result<EvalSet> {
        EvalSet::build(name, spec, self.cfg.scratchpad, self.cfg.eval_size, derive_seed(self.cfg.seed, &format!("eval/{name}/{spec}")))
    }

    pub fn eval_sets(&self) -> Result<Vec<EvalSet>> {
        self.cfg.eval_sets().iter().map(|(n, s)| self.eval_set(n, s)).collect()
    }
}

/// Mutable training state: parameters, optimizer moments and the data stream.
pub struct Trainer<'s> {
    pub session: &'s Session,
    pub params: ParameterStore<f32>,
    pub opt: AdamWState,
    /// Distribution currently sampled (the curriculum swaps it).
    pub spec: TaskSpec,
    pub step: usize,
    data_rng: ChaCha8Rng,
    fixed: Option<Vec<Example>>,
    nonfinite_streak: usize,
    threads: usize,
}

fn shard_bounds(n: usize, shards: usize) -> Vec<(usize, usize)> {
    let base = n / shards;
    let extra = n % shards;
    let mut out = Vec::with_capacity(shards);
    let mut start = 0;
    for s in 0..shards {
        let len = base + usize::from(s < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

impl<'s> Trainer<'s> {
    pub fn new(session: &'s Session) -> Result<Self> {
        let cfg = &session.cfg;
        let params = init_model(&session.model, derive_seed(cfg.seed, "init"))?;
        let opt = AdamWState::new(&params);
        let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "data"));
        let fixed = match cfg.data {
            DataMode::Fresh => None,
            DataMode::Fixed(n) => {
                Some((0..n.max(1)).map(|_| draw(&cfg.task, cfg.scratchpad, &mut data_rng)).collect::<Result<Vec<_>>>()?)
            }
        };
        Ok(Self {
            session,
            params,
            opt,
            spec: cfg.task.clone(),
            step: 0,
            data_rng,
            fixed,
            nonfinite_streak: 0,
            threads: thread_cap(cfg.threads),
        })
    }

    fn next_batch(&mut self) -> Result<Vec<TrainSeq>> {
        let s = self.session;
        let cfg = &s.cfg;
        let mut out = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let ex = match &self.fixed {
                Some(set) => set[self.data_rng.gen_range(0..set.len())].clone(),
                None => draw(&self.spec, cfg.scratchpad, &mut self.data_rng)?,
            };
            let enc = encode_example(&s.vocab, &ex, &self.spec, cfg.scratchpad, cfg.loss_on_question, s.model.max_context)?;
            out.push(enc.to_train_seq());
        }
        Ok(out)
    }

    /// Summed loss, target count and summed gradients of one shard.
    fn shard_grads(&self, shard: &[TrainSeq], dropout_seed: Option<u64>) -> Result<(f64, usize, Vec<Tensor<f32>>)> {
        let mut tape = Tape::new();
        let pv = bind_params(&mut tape, &self.params, &self.session.model, true)?;
        let (loss, count) = sequence_loss(&mut tape, &pv, &self.session.model, shard, dropout_seed)?;
        let value = tape.value(loss).data()[0] as f64;
        let mut grads = tape.backward(loss)?;
        let out = pv
            .vars
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((value, count, out))
    }

    /// One optimizer step on a fresh batch; returns the mean per-token loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let batch = self.next_batch()?;
        self.step += 1;
        let cfg = &self.session.cfg;
        let bounds = shard_bounds(batch.len(), cfg.grad_accum);
        let dropout = |i: usize| (cfg.dropout > 0.0).then(|| derive_seed(cfg.seed, &format!("dropout/{}/{i}", self.step)));
        let results: Vec<(f64, usize, Vec<Tensor<f32>>)> = if self.threads <= 1 || bounds.len() == 1 {
            bounds.iter().enumerate().map(|(i, &(a, b))| self.shard_grads(&batch[a..b], dropout(i))).collect::<Result<_>>()?
        } else {
            let this = &*self;
            let batch = &batch;
            let mut out = Vec::with_capacity(bounds.len());
            for wave in bounds.iter().enumerate().collect::<Vec<_>>().chunks(this.threads) {
                let part: Vec<Result<_>> = std::thread::scope(|scope| {
                    let hs: Vec<_> = wave
                        .iter()
                        .map(|&(i, &(a, b))| {
                            let seed = dropout(i);
                            scope.spawn(move || this.shard_grads(&batch[a..b], seed))
                        })
                        .collect();
                    hs.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
                });
                for r in part {
                    out.push(r?);
                }
            }
            out
        };
        let mut iter = results.into_iter();
        let (mut loss, mut count, mut grads) = iter.next().expect("at least one shard");
        for (l, c, g) in iter {
            loss += l;
            count += c;
            for (acc, x) in grads.iter_mut().zip(g) {
                for (a, b) in acc.data_mut().iter_mut().zip(x.data()) {
                    *a += *b;
                }
            }
        }
        if count == 0 {
            return Err(HarnessError::Config("batch has no loss-carrying tokens".into()));
        }
        let inv = 1.0 / count as f32;
        for g in &mut grads {
            for x in g.data_mut() {
                *x *= inv;
            }
        }
        let mean = loss / count as f64;
        if !mean.is_finite() {
            self.nonfinite_streak += 1;
            if self.nonfinite_streak > cfg.nonfinite_abort {
                return Err(HarnessError::Diverged { step: self.step, streak: self.nonfinite_streak });
            }
        } else {
            self.nonfinite_streak = 0;
        }
        optimizer_step(&mut self.params, &grads, &mut self.opt, &cfg.optim)?;
        Ok(mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub name: String,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// First evaluated step reaching 95% accuracy.
    pub reached_95_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub steps_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub skipped_steps: u64,
    pub param_count: usize,
    pub max_context: usize,
    pub evals: Vec<EvalSummary>,
    #[serde(skip)]
    pub metrics: Vec<MetricsRow>,
    #[serde(skip)]
    pub params: ParameterStore<f32>,
}

impl TrainOutcome {
    pub fn accuracy(&self, name: &str) -> Option<f64> {
        self.evals.iter().find(|e| e.name == name).map(|e| e.final_accuracy)
    }
}

pub(crate) fn summarize(evals: &mut Vec<EvalSummary>, step: usize, results: &[EvalResult]) {
    for r in results {
        let s = match evals.iter_mut().position(|e| e.name == r.name) {
            Some(i) => &mut evals[i],
            None => {
                evals.push(EvalSummary { name: r.name.clone(), final_accuracy: 0.0, best_accuracy: 0.0, reached_95_at: None });
                evals.last_mut().expect("just pushed")
            }
        };
        s.final_accuracy = r.accuracy;
        s.best_accuracy = s.best_accuracy.max(r.accuracy);
        if s.reached_95_at.is_none() && r.accuracy >= 0.95 {
            s.reached_95_at = Some(step);
        }
    }
}

pub(crate) fn finish(out: Option<&RunDir>, session: &Session, outcome: &TrainOutcome) -> Result<()> {
    if let Some(dir) = out {
        if session.cfg.save_checkpoint {
            save_checkpoint(&outcome.params, &session.model, &dir.path.join("model.ckpt"))?;
        }
        let summary = serde_json::to_string_pretty(outcome).map_err(|e| HarnessError::Io(e.into()))?;
        fs::write(dir.path.join("summary.json"), summary + "\n")?;
    }
    Ok(())
}

/// Plain training run: fresh (or fixed-set) batches, evaluation every
/// `eval_interval` steps and at the end.
pub fn train(cfg: &TrainConfig, out: Option<&RunDir>) -> Result<TrainOutcome> {
    if cfg.curriculum.is_some() {
        return super::curriculum::curriculum_train(cfg, out).map(|c| c.outcome);
    }
    let session = Session::prepare(cfg, &[])?;
    let evals = session.eval_sets()?;
    let mut trainer = Trainer::new(&session)?;
    if let Some(dir) = out {
        dir.create(cfg)?;
    }
    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut summary = Vec::new();
    let (mut initial, mut last, mut window, mut window_n) = (f64::NAN, f64::NAN, 0.0, 0usize);
    while trainer.step < cfg.steps {
        let loss = trainer.train_step()?;
        if trainer.step == 1 {
            initial = loss;
        }
        last = loss;
        window += loss;
        window_n += 1;
        if trainer.step % cfg.eval_interval == 0 || trainer.step == cfg.steps {
            let results = evals.iter().map(|e| evaluate(&trainer.params, &session.eval_ctx, e)).collect::<Result<Vec<_>>>()?;
            let wall = if cfg.wall_clock { start.elapsed().as_millis() as u64 } else { 0 };
            let rows: Vec<MetricsRow> = results
                .iter()
                .map(|r| MetricsRow {
                    step: trainer.step,
                    train_loss: window / window_n as f64,
                    eval_name: r.name.clone(),
                    accuracy: r.accuracy,
                    wall_ms: wall,
                })
                .collect();
            if let Some(dir) = out {
                dir.append_metrics(&rows)?;
            }
            metrics.extend(rows);
            summarize(&mut summary, trainer.step, &results);
            window = 0.0;
            window_n = 0;
            if cfg.stop_accuracy.is_some_and(|t| results.first().is_some_and(|r| r.accuracy >= t)) {
                break;
            }
        }
    }
    let outcome = TrainOutcome {
        steps_run: trainer.step,
        initial_loss: initial,
        final_loss: last,
        skipped_steps: trainer.opt.skipped,
        param_count: trainer.params.param_count(),
        max_context: session.model.max_context,
        evals: summary,
        metrics,
        params: trainer.params,
    };
    finish(out, &session, &outcome)?;
    Ok(outcome)
}

/// Loads the metrics rows of a run directory (header excluded).
pub fn read_metrics(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().skip(1).map(String::from).collect())
}
