//! Cumulative curriculum over cycle sizes 2..=4 on a tiny model, printing
//! stage boundaries and per-size accuracy.

use scratchlab::harness::*;

const CONFIG: &str = "\
task=cycle:n=2
scratchpad=inductive
n_layers=1
n_heads=2
d_model=32
batch_size=32
steps=240
eval_interval=40
eval_size=100
lr=3e-3
warmup=20
wall_clock=false
curriculum=cumulative
curriculum_n_max=4
curriculum_threshold=0.9
";

fn main() -> anyhow::Result<()> {
    let cfg = TrainConfig::from_kv(CONFIG)?;
    let cur = curriculum_train(&cfg, None)?;
    for s in &cur.stages {
        println!("{s:?}");
    }
    println!("completed {}", cur.completed);
    for entry in &cur.final_by_size {
        println!("{entry:?}");
    }
    Ok(())
}
