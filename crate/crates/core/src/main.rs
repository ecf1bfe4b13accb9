use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scratchlab::globality::{
    autoregressive_globality, cumulative_parity_steps, cycle_analytic, cycle_label_joint, dfs_steps, globality_search,
    write_report_csv, MiMode, SearchConfig,
};
use scratchlab::harness::{
    draw, evaluate, gradcheck_suite, parse_kv, run_experiment, train, RunDir, Session, TrainConfig, PRESETS,
};
use scratchlab::model::load_checkpoint;

#[derive(Parser)]
#[command(name = "scratchlab", version, about = "Globality and scratchpad experiments on small transformers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print samples as JSON lines.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Train a model; writes metrics, config snapshot and checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on the configured eval sets.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Exact globality search (keys: target=cycle|dfs|parity, n, k, k_max, threshold, samples).
    Globality {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference checks of every primitive and a tiny model.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Run a registered preset; the config file holds overrides.
    Experiment {
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    fn text(&self) -> Result<String> {
        let mut text = match &self.config {
            Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        if let Some(seed) = self.seed {
            if !text.is_empty() && !text.ends_with('\n') {
                text.push('\n');
            }
            text.push_str(&format!("seed={seed}\n"));
        }
        Ok(text)
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn kv(text: &str, key: &str) -> Result<Option<String>> {
    Ok(parse_kv(text)?.into_iter().rev().find(|(k, _)| k == key).map(|(_, v)| v))
}

fn kv_or<T: std::str::FromStr>(text: &str, key: &str, default: T) -> Result<T> {
    match kv(text, key)? {
        Some(v) => v.parse().map_err(|_| anyhow::anyhow!("{key}: cannot parse {v:?}")),
        None => Ok(default),
    }
}

fn gen(common: &Common, count: usize) -> Result<()> {
    let cfg = TrainConfig::from_kv(&common.text()?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sink: Box<dyn Write> = match &common.out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Box::new(fs::File::create(dir.join("samples.jsonl"))?)
        }
        None => Box::new(io::stdout().lock()),
    };
    for _ in 0..count {
        let ex = draw(&cfg.task, cfg.scratchpad, &mut rng)?;
        writeln!(sink, "{}", serde_json::to_string(&ex.sample)?)?;
    }
    Ok(())
}

fn train_cmd(common: &Common) -> Result<()> {
    let text = common.text()?;
    let cfg = TrainConfig::from_kv(&text)?;
    let dir = RunDir::new(common.out_or("runs/train"), text);
    let o = train(&cfg, Some(&dir))?;
    println!("steps={} initial_loss={:.4} final_loss={:.4}", o.steps_run, o.initial_loss, o.final_loss);
    for e in &o.evals {
        println!("{} accuracy={:.4} best={:.4} reached_95_at={:?}", e.name, e.final_accuracy, e.best_accuracy, e.reached_95_at);
    }
    Ok(())
}

fn eval_cmd(common: &Common, checkpoint: &Path) -> Result<()> {
    let (params, model) = load_checkpoint(checkpoint)?;
    let mut cfg = TrainConfig::from_kv(&common.text()?)?;
    cfg.max_context = Some(model.max_context);
    let mut session = Session::prepare(&cfg, &[])?;
    if session.model.vocab_size != model.vocab_size {
        bail!("checkpoint vocabulary {} does not match task vocabulary {}", model.vocab_size, session.model.vocab_size);
    }
    session.eval_ctx.model = model;
    let out = common.out_or("runs/eval");
    fs::create_dir_all(&out)?;
    let mut all = Vec::new();
    for set in session.eval_sets()? {
        let r = evaluate(&params, &session.eval_ctx, &set)?;
        println!("{} accuracy={:.4} ({}/{})", r.name, r.accuracy, r.correct, r.total);
        all.push(r);
    }
    fs::write(out.join("eval.json"), serde_json::to_string_pretty(&all)? + "\n")?;
    Ok(())
}

fn globality_cmd(common: &Common) -> Result<()> {
    let text = common.text()?;
    let target = kv(&text, "target")?.unwrap_or_else(|| "cycle".into());
    let n: usize = kv_or(&text, "n", 3)?;
    let samples: usize = kv_or(&text, "samples", 0)?;
    let cfg = SearchConfig {
        k_max: kv_or(&text, "k_max", 3)?,
        threshold: kv_or(&text, "threshold", 0.01)?,
        include_histogram: kv_or(&text, "histogram", true)?,
        mode: if samples == 0 {
            MiMode::Exact
        } else {
            MiMode::Plugin { n_samples: samples, seed: kv_or(&text, "seed", 0)? }
        },
        max_evals: kv(&text, "max_evals")?.map(|v| v.parse()).transpose()?,
        threads: scratchlab::harness::thread_cap(None),
        ..SearchConfig::default()
    };
    let out = common.out_or("runs/globality");
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.txt"), &text)?;
    match target.as_str() {
        "cycle" => {
            let r = globality_search(&cycle_label_joint(n)?, &cfg)?;
            write_report_csv(&mut fs::File::create(out.join("globality.csv"))?, &r)?;
            for k in &r.per_k {
                println!("k={} best_mi={:.9} witness={:?}", k.k, k.best_mi, k.witness);
            }
            println!("verdict={:?} incomplete={} analytic={}", r.verdict, r.incomplete, cycle_analytic(n)?);
        }
        "dfs" | "parity" => {
            let steps = if target == "dfs" { dfs_steps(n)? } else { cumulative_parity_steps(n, kv_or(&text, "k", n / 2)?)? };
            let r = autoregressive_globality(&steps, &cfg)?;
            let mut csv = String::from("t,entropy_bits,k,best_mi_bits,witness,incomplete\n");
            for s in &r.steps {
                let k = s.k.map_or("none".to_string(), |k| k.to_string());
                let w: Vec<String> = s.witness.iter().map(|i| i.to_string()).collect();
                csv.push_str(&format!("{},{:.9},{k},{:.9},{},{}\n", s.t, s.entropy, s.best_mi, w.join(" "), s.incomplete));
            }
            fs::write(out.join("globality.csv"), csv)?;
            println!("overall={:?} over {} steps", r.overall, r.steps.len());
        }
        other => bail!("unknown globality target {other:?} (cycle|dfs|parity)"),
    }
    Ok(())
}

fn gradcheck_cmd(common: &Common) -> Result<bool> {
    let lines = gradcheck_suite(common.seed.unwrap_or(0))?;
    for l in &lines {
        println!(
            "{:<16} cases={:<3} max_rel_err={:.3e} tol={:.0e} {}",
            l.name,
            l.cases,
            l.max_rel_err,
            l.tolerance,
            if l.passed { "PASS" } else { "FAIL" }
        );
    }
    Ok(lines.iter().all(|l| l.passed))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Gen { common, count } => gen(&common, count).map(|_| true),
        Cmd::Train { common } => train_cmd(&common).map(|_| true),
        Cmd::Eval { common, checkpoint } => eval_cmd(&common, &checkpoint).map(|_| true),
        Cmd::Globality { common } => globality_cmd(&common).map(|_| true),
        Cmd::Gradcheck { common } => gradcheck_cmd(&common),
        Cmd::Experiment { name, common } => {
            if !PRESETS.iter().any(|(n, _)| *n == name) {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                bail!("unknown preset {name:?}; available: {}", names.join(", "));
            }
            let out = common.out_or(&format!("runs/{name}"));
            let report = run_experiment(&name, &common.text()?, &out)?;
            println!("{}", report.summary);
            Ok(report.passed != Some(false))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
