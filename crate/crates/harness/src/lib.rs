//! Experiment drivers for the aegis gate: tamper-to-shutdown trials,
//! governed vs. ungoverned comparison, silent-amendment and log-mutation
//! fuzzing.

pub mod chain_fuzz;
pub mod comparison;
pub mod fuzz;
pub mod mutation;
pub mod report;
pub mod rig;
pub mod stats;
pub mod tamper;
pub mod tasks;

use thiserror::Error;

pub use comparison::{run_experiment, CompareConfig, ComparisonReport};
pub use fuzz::{run_silent_amendment_fuzz, FuzzReport};
pub use mutation::PolicyMutation;
pub use rig::Rig;
pub use tamper::{run_tamper_trial, TamperConfig, TamperTrialResult};
pub use tasks::{generate_task_set, Proportions, TaskSet};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("setup: {0}")]
    Setup(String),
    #[error("config: {0}")]
    Config(String),
    #[error("recovery: {0}")]
    Recovery(String),
    #[error("task sets differ: governed {governed}, baseline {baseline}")]
    MismatchedTaskSets { governed: String, baseline: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
