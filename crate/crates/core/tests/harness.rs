use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scratchlab::harness::*;
use scratchlab::scratchpad::extract_answer;

const TINY: &str = "\
# tiny desk check
task=cycle:n=2
scratchpad=none
n_layers=1
n_heads=2
d_model=16
batch_size=8
steps=10
eval_interval=5
eval_size=32
eval_batch=32
warmup=0
lr=1e-3
wall_clock=false
threads=1
";

fn cfg(extra: &str) -> TrainConfig {
    TrainConfig::from_kv(&format!("{TINY}{extra}")).unwrap()
}

#[test]
fn run_directory_holds_snapshot_metrics_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = RunDir::new(dir.path().join("run"), TINY);
    let o = train(&cfg(""), Some(&run)).unwrap();
    assert_eq!(o.steps_run, 10);
    assert_eq!(fs::read_to_string(run.path.join("config.txt")).unwrap(), TINY);
    let metrics = fs::read_to_string(run.path.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(METRICS_HEADER, "step,train_loss,eval_name,accuracy,wall_ms");
    let rows = read_metrics(&run.path.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("5,") && rows[1].starts_with("10,"));
    assert!(rows.iter().all(|r| r.ends_with(",0") && r.contains(",test,")));
    assert!(run.path.join("model.ckpt").exists());
    assert!(run.path.join("summary.json").exists());
    let resolved = TrainConfig::from_kv(&fs::read_to_string(run.path.join("config.resolved.txt")).unwrap()).unwrap();
    assert_eq!(resolved, cfg(""));
}

#[test]
fn identical_seed_gives_byte_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{TINY}scratchpad=inductive\ntask=cycle:n=3\nseed=7\n");
    let c = TrainConfig::from_kv(&text).unwrap();
    let read = |name: &str| {
        let run = RunDir::new(dir.path().join(name), text.clone());
        train(&c, Some(&run)).unwrap();
        fs::read(run.path.join("metrics.csv")).unwrap()
    };
    assert_eq!(read("a"), read("b"));
    let other = TrainConfig::from_kv(&format!("{text}seed=8\n")).unwrap();
    assert_ne!(train(&c, None).unwrap().final_loss, train(&other, None).unwrap().final_loss);
}

#[test]
fn training_lowers_the_loss() {
    let o = train(&cfg("steps=60\neval_interval=60\nbatch_size=16\n"), None).unwrap();
    assert!(o.final_loss < o.initial_loss, "{} -> {}", o.initial_loss, o.final_loss);
}

#[test]
fn evaluation_does_not_touch_parameters_or_optimizer() {
    let session = Session::prepare(&cfg("scratchpad=inductive\n"), &[]).unwrap();
    let mut trainer = Trainer::new(&session).unwrap();
    trainer.train_step().unwrap();
    let (params, opt) = (trainer.params.checksum(), trainer.opt.clone());
    let set = session.eval_sets().unwrap().remove(0);
    let r = evaluate(&trainer.params, &session.eval_ctx, &set).unwrap();
    assert_eq!(trainer.params.checksum(), params);
    assert_eq!(trainer.opt, opt);
    let correct = r.records.iter().filter(|x| x.correct).count();
    assert_eq!(r.correct, correct);
    assert_eq!(r.accuracy, correct as f64 / r.records.len() as f64);
    assert_eq!(r.total, 32);
}

#[test]
fn briefly_trained_model_sits_at_chance_on_a_hard_cycle() {
    // Enough steps to learn the answer format, far too few to solve n=6.
    let c = cfg("task=cycle:n=6\nsteps=40\neval_interval=40\neval_size=2000\neval_batch=250\nbatch_size=16\n");
    let o = train(&c, None).unwrap();
    let acc = o.accuracy("test").unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "{acc}");
}

#[test]
fn threaded_evaluation_matches_serial() {
    let session = Session::prepare(&cfg("scratchpad=flat\ntask=cycle:n=3\n"), &[]).unwrap();
    let trainer = Trainer::new(&session).unwrap();
    let set = session.eval_sets().unwrap().remove(0);
    let serial = evaluate(&trainer.params, &session.eval_ctx, &set).unwrap();
    let mut ctx = session.eval_ctx.clone();
    ctx.threads = 4;
    ctx.batch = 5;
    let threaded = evaluate(&trainer.params, &ctx, &set).unwrap();
    assert_eq!(serial.records, threaded.records);
}

#[test]
fn extraction_of_builder_answers_matches_the_oracles() {
    let specs = [
        "cycle:n=4",
        "uneven:total=24,short=6",
        "ood:i=4,total=24",
        "mixed:n_max=5",
        "parity:min=1,max=12,d_amb=24",
        "half_parity:n=20",
        "add_spaces:min=1,max=6,d_amb=12",
        "add_shift:min=1,max=6,d_amb=12",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for spec in specs {
        let spec: TaskSpec = spec.parse().unwrap();
        for mode in [ScratchpadMode::Flat, ScratchpadMode::Inductive] {
            for _ in 0..300 {
                let ex = draw(&spec, mode, &mut rng).unwrap();
                let last = match mode {
                    ScratchpadMode::Flat => ex.flat_target.clone(),
                    _ => ex.sample.states.last().unwrap().clone(),
                };
                assert_eq!(extract_answer(&last, ex.rule).unwrap(), ex.sample.answer, "{spec} {}", mode.name());
            }
        }
    }
}

#[test]
fn two_size_curriculum_is_plain_training() {
    let base = "steps=10\neval_interval=5\n";
    let plain = train(&cfg(&format!("{base}eval.cycle2=cycle:n=2\n")), None).unwrap();
    let cur = curriculum_train(&cfg(&format!("{base}curriculum=cumulative\ncurriculum_n_max=2\ncurriculum_threshold=1.5\n")), None).unwrap();
    assert_eq!(cur.stages.len(), 1);
    assert_eq!(cur.outcome.metrics, plain.metrics);
    assert_eq!(cur.outcome.params.checksum(), plain.params.checksum());
}

#[test]
fn curriculum_logs_stage_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{TINY}steps=12\neval_interval=2\ncurriculum=forgetful\ncurriculum_n_max=4\ncurriculum_threshold=0.0\n");
    let run = RunDir::new(dir.path(), text.clone());
    let cur = curriculum_train(&TrainConfig::from_kv(&text).unwrap(), Some(&run)).unwrap();
    assert!(cur.completed);
    let starts: Vec<usize> = cur.stages.iter().map(|s| s.start_step).collect();
    assert_eq!(starts, [0, 2, 4]);
    assert_eq!(cur.final_by_size.len(), 3);
    let csv = fs::read_to_string(dir.path().join("stages.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn config_errors_are_reported() {
    assert!(TrainConfig::from_kv("steps=0\n").is_err());
    assert!(TrainConfig::from_kv("bogus=1\n").is_err());
    assert!(TrainConfig::from_kv("task=three_cycle:n=3\nscratchpad=inductive\n").is_err());
    assert!(TrainConfig::from_kv("task=cycle:n=2\neval.x=parity:min=1,max=2,d_amb=4\n").is_err());
    assert!(run_experiment("no-such-preset", "", std::path::Path::new("/nonexistent")).is_err());
}

#[test]
fn gradcheck_preset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment("gradcheck", "", dir.path()).unwrap();
    assert_eq!(report.passed, Some(true));
    assert_eq!(report.exit_code(), 0);
    assert!(dir.path().join("gradcheck.csv").exists());
}

#[test]
fn every_preset_parses() {
    assert_eq!(PRESETS.len(), 12);
    for (name, text) in PRESETS {
        if !["gradcheck", "globality-cycle"].contains(&name.as_ref()) {
            TrainConfig::from_kv(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}

#[test]
fn fixed_data_mode_trains() {
    let o = train(&cfg("data=fixed:16\n"), None).unwrap();
    assert_eq!(o.steps_run, 10);
}
