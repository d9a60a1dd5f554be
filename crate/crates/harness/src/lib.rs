//! Experiment plumbing: specs, training runs, evaluation sweeps and reports.
//!
//! Outputs of a run directory:
//! - `results_<name>.csv`: (sweep value, method, mean, std, n)
//! - `timing_<name>.csv`: wall-clock per decision
//! - `metrics_<method>.csv`: one row per training epoch and sweep value
//! - `<method>_<sweep>_<value>.json`: agent checkpoints

use std::path::PathBuf;

pub mod report;
pub mod spec;
pub mod sweep;
pub mod train;

pub use report::{parse_report, report_csv, results_csv, ReportRow};
pub use spec::{ExperimentSpec, Method, Preset, SweepVariable, TrainingSpec};
pub use sweep::{run_sweep, ResultRow};
pub use train::{train_agents, Learner, Policies};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("no checkpoint for {method} at {path}")]
    MissingCheckpoint { method: String, path: PathBuf },
    #[error("no trained policy for {method} at sweep value {value}")]
    MissingPolicy { method: String, value: f64 },
    #[error("{count} decisions of {method} violate the power or unit-modulus constraint")]
    ConstraintViolation { method: String, count: usize },
    #[error("training and evaluation tasks share a random stream")]
    SeedOverlap,
    #[error("malformed results file: {0}")]
    Report(String),
    #[error(transparent)]
    Core(#[from] rismeta_core::Error),
    #[error(transparent)]
    Agent(#[from] rismeta_agents::AgentError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Spec(_) => "spec",
            HarnessError::MissingCheckpoint { .. } => "missing_checkpoint",
            HarnessError::MissingPolicy { .. } => "missing_policy",
            HarnessError::ConstraintViolation { .. } => "constraint_violation",
            HarnessError::SeedOverlap => "seed_overlap",
            HarnessError::Report(_) => "report",
            HarnessError::Core(_) => "core",
            HarnessError::Agent(_) => "agent",
            HarnessError::Csv(_) => "csv",
            HarnessError::Json(_) => "json",
            HarnessError::Io(_) => "io",
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
