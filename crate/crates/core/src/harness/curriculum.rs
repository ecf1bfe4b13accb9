use std::fs;
use std::time::Instant;

use serde::Serialize;

use super::config::{DataMode, Schedule, TaskSpec, TrainConfig};
use super::train::{evaluate, finish, summarize, EvalSet, MetricsRow, RunDir, Session, TrainOutcome, Trainer};
use super::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    /// Cycle size the stage targets.
    pub n: usize,
    pub train_spec: String,
    pub start_step: usize,
    /// Step at which the stage eval first reached the threshold.
    pub passed_at: Option<usize>,
    pub final_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct CurriculumOutcome {
    pub stages: Vec<StageRecord>,
    /// All stages passed within the budget.
    pub completed: bool,
    /// Accuracy on every size `2..=n_max` after training ends.
    pub final_by_size: Vec<(usize, f64)>,
    pub outcome: TrainOutcome,
}

fn stage_spec(schedule: Schedule, i: usize) -> TaskSpec {
    match schedule {
        Schedule::Cumulative if i > 2 => TaskSpec::Mixed { n_max: i },
        _ => TaskSpec::Cycle { n: i },
    }
}

/// Trains through cycle sizes 2..=n_max, moving to the next size once the
/// current one is solved at the configured threshold. `steps` is the total
/// budget; running out ends the run with a partial record.
pub fn curriculum_train(cfg: &TrainConfig, out: Option<&RunDir>) -> Result<CurriculumOutcome> {
    let cur = cfg.curriculum.clone().ok_or_else(|| HarnessError::Config("curriculum is not set".into()))?;
    if cfg.data != DataMode::Fresh {
        return Err(HarnessError::Config("curriculum needs fresh data".into()));
    }
    let extra: Vec<TaskSpec> = (2..=cur.n_max).flat_map(|i| [stage_spec(cur.schedule, i), TaskSpec::Cycle { n: i }]).collect();
    let session = Session::prepare(cfg, &extra)?;
    let sets: Vec<EvalSet> =
        (2..=cur.n_max).map(|i| session.eval_set(&format!("cycle{i}"), &TaskSpec::Cycle { n: i })).collect::<Result<_>>()?;
    let mut trainer = Trainer::new(&session)?;
    if let Some(dir) = out {
        dir.create(cfg)?;
    }
    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut summary = Vec::new();
    let mut stages: Vec<StageRecord> = Vec::new();
    let (mut initial, mut last, mut window, mut window_n) = (f64::NAN, f64::NAN, 0.0, 0usize);
    let mut completed = false;
    'stages: for i in 2..=cur.n_max {
        trainer.spec = stage_spec(cur.schedule, i);
        let set = &sets[i - 2];
        let mut record =
            StageRecord { n: i, train_spec: trainer.spec.to_string(), start_step: trainer.step, passed_at: None, final_accuracy: 0.0 };
        loop {
            let stage_len = trainer.step - record.start_step;
            if trainer.step >= cfg.steps || cur.stage_steps.is_some_and(|s| stage_len >= s) {
                stages.push(record);
                break 'stages;
            }
            let loss = trainer.train_step()?;
            if trainer.step == 1 {
                initial = loss;
            }
            last = loss;
            window += loss;
            window_n += 1;
            if trainer.step % cfg.eval_interval != 0 {
                continue;
            }
            let r = evaluate(&trainer.params, &session.eval_ctx, set)?;
            let row = MetricsRow {
                step: trainer.step,
                train_loss: window / window_n as f64,
                eval_name: r.name.clone(),
                accuracy: r.accuracy,
                wall_ms: if cfg.wall_clock { start.elapsed().as_millis() as u64 } else { 0 },
            };
            if let Some(dir) = out {
                dir.append_metrics(std::slice::from_ref(&row))?;
            }
            metrics.push(row);
            summarize(&mut summary, trainer.step, std::slice::from_ref(&r));
            window = 0.0;
            window_n = 0;
            record.final_accuracy = r.accuracy;
            if r.accuracy >= cur.threshold {
                record.passed_at = Some(trainer.step);
                stages.push(record);
                completed = i == cur.n_max;
                break;
            }
        }
    }
    let mut final_by_size = Vec::new();
    for (i, set) in (2..=cur.n_max).zip(&sets) {
        final_by_size.push((i, evaluate(&trainer.params, &session.eval_ctx, set)?.accuracy));
    }
    if let Some(dir) = out {
        let mut text = String::from("stage_n,train_spec,start_step,passed_at,final_accuracy\n");
        for s in &stages {
            let passed = s.passed_at.map_or(String::new(), |p| p.to_string());
            text.push_str(&format!("{},{},{},{},{:.6}\n", s.n, s.train_spec.replace(',', ";"), s.start_step, passed, s.final_accuracy));
        }
        fs::write(dir.path.join("stages.csv"), text)?;
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
    Ok(CurriculumOutcome { stages, completed, final_by_size, outcome })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_distributions() {
        assert_eq!(stage_spec(Schedule::Cumulative, 2), TaskSpec::Cycle { n: 2 });
        assert_eq!(stage_spec(Schedule::Cumulative, 4), TaskSpec::Mixed { n_max: 4 });
        assert_eq!(stage_spec(Schedule::Forgetful, 4), TaskSpec::Cycle { n: 4 });
    }
}
