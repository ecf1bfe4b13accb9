//! Trains a small model on short parity questions with the inductive scratchpad, then
//! decodes a few held-out questions with both decoding routes.

use scratchlab::harness::*;
use scratchlab::scratchpad::{inductive_decode, DecodeMode};

const CONFIG: &str = "\
task=parity:min=1,max=4,d_amb=6
scratchpad=inductive
n_layers=2
n_heads=4
d_model=64
batch_size=32
steps=1500
eval_interval=250
eval_size=200
lr=3e-3
warmup=20
wall_clock=false
";

fn main() -> anyhow::Result<()> {
    let cfg = TrainConfig::from_kv(CONFIG)?;
    let outcome = train(&cfg, None)?;
    for row in &outcome.metrics {
        println!("step {:4} loss {:.4} {} acc {:.3}", row.step, row.train_loss, row.eval_name, row.accuracy);
    }

    let session = Session::prepare(&cfg, &[])?;
    let set = session.eval_set("demo", &cfg.task)?;
    for ex in set.examples.iter().take(3) {
        println!("\nquestion {}  expected {}", ex.input, ex.sample.answer);
        for mode in [DecodeMode::Masked, DecodeMode::Truncated] {
            let out = inductive_decode(
                &outcome.params,
                &session.model,
                &session.vocab,
                &ex.input,
                ex.use_start,
                session.eval_ctx.limits,
                ex.rule,
                mode,
            )?;
            let states: Vec<String> = out.states.iter().map(|s| s.to_string()).collect();
            println!("  {mode:?}: {} -> {:?}", states.join(" | "), out.answer.map(|a| a.to_string()));
        }
    }
    Ok(())
}
