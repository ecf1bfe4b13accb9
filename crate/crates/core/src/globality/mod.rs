//! Globality degree on small instances: mutual information between a few
//! input positions (optionally with the token histogram) and a target.

mod cycle;
mod joint;
mod mi;
mod search;

pub use cycle::{
    canonical_cycle_graphs, cumulative_parity_steps, cycle_analytic, cycle_label_joint, dfs_steps, subset_event,
    subset_event_rates, SubsetEventRates,
};
pub use joint::{step_joints, DiscreteJoint};
pub use mi::{entropy_bits, exact_mi, plugin_mi, PluginMi};
pub use search::{
    autoregressive_globality, globality_search, write_report_csv, ArReport, GlobalityReport, KResult, MiMode,
    SearchConfig, SearchStrategy, StepReport,
};

use thiserror::Error;

use crate::scratchpad::ScratchpadError;
use crate::tasks::TaskError;

#[derive(Debug, Error)]
pub enum GlobalityError {
    #[error("exact mode needs an enumerable support; this joint is an empirical sample")]
    NonEnumerable,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Scratchpad(#[from] ScratchpadError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GlobalityError>;
