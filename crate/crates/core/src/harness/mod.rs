//! Training, evaluation and experiment orchestration.

mod config;
mod curriculum;
mod experiment;
mod gradcheck;
mod optim;
mod task;
mod train;

pub use config::{parse_kv, CurriculumSpec, DataMode, Schedule, ScratchpadMode, TaskSpec, TrainConfig};
pub use curriculum::{curriculum_train, CurriculumOutcome, StageRecord};
pub use experiment::{run_experiment, ExperimentReport, PRESETS};
pub use gradcheck::{gradcheck_suite, model_line, primitive_line, GradcheckLine, MODEL_TOL, PRIMITIVES, PRIMITIVE_TOL};
pub use optim::{optimizer_step, AdamWConfig, AdamWState, StepInfo};
pub use task::{draw, encode_example, flat_target, probe, vocab_for, Example, Probe};
pub use train::{
    evaluate, read_metrics, train, EvalContext, EvalRecord, EvalResult, EvalSet, EvalSummary, MetricsRow, RunDir,
    Session, TrainOutcome, Trainer, METRICS_HEADER,
};

use thiserror::Error;

use crate::globality::GlobalityError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::scratchpad::ScratchpadError;
use crate::tasks::TaskError;

pub const THREADS_ENV: &str = "SCRATCHLAB_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("oracle check failed: {0}")]
    Oracle(String),
    #[error("training diverged at step {step}: {streak} consecutive non-finite losses")]
    Diverged { step: usize, streak: usize },
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Scratchpad(#[from] ScratchpadError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Globality(#[from] GlobalityError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Worker count: the requested value (or the machine's parallelism), capped
/// by `SCRATCHLAB_THREADS` when set.
pub fn thread_cap(requested: Option<usize>) -> usize {
    let base = requested.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cap = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&c| c > 0);
    cap.map_or(base, |c| base.min(c)).max(1)
}

/// Derives an independent stream seed from a base seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then a splitmix64 finalizer.
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in label.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_by_label_and_base() {
        assert_ne!(derive_seed(0, "data"), derive_seed(0, "init"));
        assert_ne!(derive_seed(0, "data"), derive_seed(1, "data"));
        assert_eq!(derive_seed(7, "x"), derive_seed(7, "x"));
    }
}
