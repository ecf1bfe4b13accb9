use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{derive_seed, Result};
use crate::model::{bind_params, init_model, sequence_loss, ModelConfig, ParameterStore, SeqInput, TrainSeq};
use crate::numerics::{
    finite_diff_check, AttentionLayout, NumericsError, Reduction, Segment, Tape, Tensor, Var, HIDDEN,
};

pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;
const CASES: usize = 10;
const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckLine {
    pub name: String,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> crate::numerics::Result<Var>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).expect("shape matches data")
}

/// Weighted sum of `out`, so every output coordinate carries its own weight.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> crate::numerics::Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let w = random(&shape, &mut ChaCha8Rng::seed_from_u64(seed));
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn check_case(inputs: &[Tensor<f64>], build: &Build, seed: u64) -> Result<f64> {
    let objective = |xs: &[Tensor<f64>]| -> crate::numerics::Result<(f64, Vec<Tensor<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let out = build(&mut tape, &vars)?;
        let loss = project(&mut tape, out, seed)?;
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        let g = vars.iter().zip(xs).map(|(&v, x)| grads.take(v).unwrap_or_else(|| Tensor::zeros(x.shape()))).collect();
        Ok((value, g))
    };
    let (_, analytic) = objective(inputs)?;
    let report = finite_diff_check(|xs| objective(xs).map(|(v, _)| v), inputs, &analytic, STEP, 4096, seed)?;
    Ok(report.max_rel_err)
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(1..=6)
}

struct Case {
    inputs: Vec<Tensor<f64>>,
    build: Box<Build>,
}

fn case(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> crate::numerics::Result<Var> + 'static) -> Case {
    Case { inputs, build: Box::new(build) }
}

fn visibility_row(len: usize, row: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut v: Vec<bool> = (0..len).map(|j| j <= row && rng.gen_bool(0.6)).collect();
    v[row] = true;
    v
}

fn primitive_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    let (r, c) = (dim(rng), dim(rng));
    match name {
        "matmul" => {
            let k = dim(rng);
            case(vec![random(&[r, k], rng), random(&[k, c], rng)], |t, v| t.matmul(v[0], v[1]))
        }
        "add" => case(vec![random(&[r, c], rng), random(&[r, c], rng)], |t, v| t.add(v[0], v[1])),
        "mul" => case(vec![random(&[r, c], rng), random(&[r, c], rng)], |t, v| t.mul(v[0], v[1])),
        "scale" => {
            let f = rng.gen_range(-2.0..2.0);
            case(vec![random(&[r, c], rng)], move |t, v| t.scale(v[0], f))
        }
        "add_row" => case(vec![random(&[r, c], rng), random(&[c], rng)], |t, v| t.add_row(v[0], v[1])),
        "transpose" => case(vec![random(&[r, c], rng)], |t, v| t.transpose(v[0])),
        "gelu" => case(vec![random(&[r, c], rng)], |t, v| t.gelu(v[0])),
        "sum" => case(vec![random(&[r, c], rng)], |t, v| t.sum(v[0])),
        "embedding" => {
            let ids: Vec<usize> = (0..dim(rng)).map(|_| rng.gen_range(0..r)).collect();
            case(vec![random(&[r, c], rng)], move |t, v| t.embedding(v[0], &ids))
        }
        "gather_rows" => {
            let rows: Vec<usize> = (0..dim(rng)).map(|_| rng.gen_range(0..r)).collect();
            case(vec![random(&[r, c], rng)], move |t, v| t.gather_rows(v[0], &rows))
        }
        "dropout" => {
            let seed = rng.gen();
            case(vec![random(&[r, c], rng)], move |t, v| t.dropout(v[0], 0.3, seed))
        }
        "layernorm" => {
            let c = c + 1;
            case(vec![random(&[r, c], rng), random(&[c], rng), random(&[c], rng)], |t, v| {
                t.layernorm(v[0], v[1], v[2], 1e-5)
            })
        }
        "masked_softmax" => {
            let mut mask = vec![0.0; r * c];
            for row in 0..r {
                let keep = rng.gen_range(0..c);
                for j in 0..c {
                    if j != keep && rng.gen_bool(0.4) {
                        mask[row * c + j] = HIDDEN;
                    }
                }
            }
            let mask = Tensor::new(vec![r, c], mask).expect("shape matches data");
            case(vec![random(&[r, c], rng)], move |t, v| t.masked_softmax(v[0], &mask))
        }
        "cross_entropy" => {
            let targets: Vec<usize> = (0..r).map(|_| rng.gen_range(0..c)).collect();
            let mut mask: Vec<bool> = (0..r).map(|_| rng.gen_bool(0.7)).collect();
            mask[rng.gen_range(0..r)] = true;
            let reduction = if rng.gen_bool(0.5) { Reduction::Mean } else { Reduction::Sum };
            case(vec![random(&[r, c], rng)], move |t, v| t.cross_entropy(v[0], &targets, &mask, reduction))
        }
        "attention" => {
            let heads = rng.gen_range(1..=3);
            let d = heads * rng.gen_range(1..=3);
            let mut segments = Vec::new();
            let mut start = 0;
            for _ in 0..rng.gen_range(1..=3) {
                let len = rng.gen_range(1..=5);
                let visible = (0..len).flat_map(|i| visibility_row(len, i, rng)).collect();
                segments.push(Segment { start, len, visible });
                start += len;
            }
            segments.shuffle(rng);
            let layout = Rc::new(AttentionLayout { segments, n_heads: heads });
            let n = start;
            case(vec![random(&[n, d], rng), random(&[n, d], rng), random(&[n, d], rng)], move |t, v| {
                t.attention(v[0], v[1], v[2], Rc::clone(&layout))
            })
        }
        _ => unreachable!("unknown primitive {name}"),
    }
}

pub const PRIMITIVES: [&str; 15] = [
    "matmul",
    "add",
    "mul",
    "scale",
    "add_row",
    "transpose",
    "gelu",
    "sum",
    "embedding",
    "gather_rows",
    "dropout",
    "layernorm",
    "masked_softmax",
    "cross_entropy",
    "attention",
];

fn line(name: &str, cases: usize, max_rel_err: f64, tolerance: f64) -> GradcheckLine {
    GradcheckLine { name: name.to_string(), cases, max_rel_err, tolerance, passed: max_rel_err <= tolerance }
}

pub fn primitive_line(name: &str, seed: u64) -> Result<GradcheckLine> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, name));
    let mut worst = 0.0f64;
    for i in 0..CASES {
        let c = primitive_case(name, &mut rng);
        worst = worst.max(check_case(&c.inputs, &c.build, derive_seed(seed, &format!("{name}/{i}")))?);
    }
    Ok(line(name, CASES, worst, PRIMITIVE_TOL))
}

fn tiny_batch(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<TrainSeq> {
    (0..3)
        .map(|b| {
            let len = rng.gen_range(3..=cfg.max_context);
            let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
            let input = if b == 0 {
                SeqInput::causal(tokens)
            } else {
                let groups = (0..len).map(|i| if i < 2 { 0 } else { 1 + (i % 2) }).collect();
                SeqInput::grouped(tokens, (0..len).collect(), groups)
            };
            let targets = (0..len).map(|_| rng.gen_range(0..cfg.vocab_size)).collect();
            let mut loss_mask: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.6)).collect();
            loss_mask[len - 1] = true;
            TrainSeq { input, targets, loss_mask }
        })
        .collect()
}

/// Full-model loss gradient check in 64-bit on a 1-layer, 1-head, width-16 model.
pub fn model_line(seed: u64) -> Result<GradcheckLine> {
    let cfg = ModelConfig::new(1, 1, 16, 7, 10);
    let store: ParameterStore<f64> = init_model(&cfg, derive_seed(seed, "tiny-init"))?.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "tiny-batch"));
    let batch = tiny_batch(&cfg, &mut rng);
    let names = store.names().to_vec();
    let rebuild = |xs: &[Tensor<f64>]| -> crate::model::Result<ParameterStore<f64>> {
        let mut s = ParameterStore::new();
        for (n, x) in names.iter().zip(xs) {
            s.insert(n.clone(), x.clone())?;
        }
        Ok(s)
    };
    let objective = |xs: &[Tensor<f64>], want_grads: bool| -> crate::model::Result<(f64, Vec<Tensor<f64>>)> {
        let s = rebuild(xs)?;
        let mut tape = Tape::new();
        let pv = bind_params(&mut tape, &s, &cfg, want_grads)?;
        let (loss, _) = sequence_loss(&mut tape, &pv, &cfg, &batch, None)?;
        let value = tape.value(loss).data()[0];
        if !want_grads {
            return Ok((value, Vec::new()));
        }
        let mut g = tape.backward(loss)?;
        let grads = pv.vars.iter().zip(xs).map(|(&v, x)| g.take(v).unwrap_or_else(|| Tensor::zeros(x.shape()))).collect();
        Ok((value, grads))
    };
    let (_, analytic) = objective(store.tensors(), true)?;
    let report = finite_diff_check(
        |xs| objective(xs, false).map(|(v, _)| v).map_err(|e| NumericsError::Invalid(e.to_string())),
        store.tensors(),
        &analytic,
        STEP,
        1 << 16,
        seed,
    )?;
    Ok(line("model_1x1x16", 1, report.max_rel_err, MODEL_TOL))
}

/// Every primitive on random shapes plus the tiny full model.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<GradcheckLine>> {
    let mut out = PRIMITIVES.iter().map(|p| primitive_line(p, seed)).collect::<Result<Vec<_>>>()?;
    out.push(model_line(seed)?);
    Ok(out)
}
