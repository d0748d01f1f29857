//! Latency measurement, constant-budget architecture search and the
//! train → align → evaluate experiment driver behind the `draftlab` CLI.

pub mod arch;
pub mod eval;
pub mod experiment;
pub mod latency;
pub mod manifest;
pub mod pipeline;
pub mod report;

use thiserror::Error;

pub use arch::{budget_search, BudgetCandidate, BudgetSearchSpec};
pub use experiment::{run_experiment, ExperimentReport};
pub use latency::{measure_latency, LatencyOptions, LatencyRun};
pub use pipeline::PipelineConfig;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] draftlab::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<BenchError>,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    pub fn kind(&self) -> &'static str {
        match self {
            BenchError::Core(e) => e.kind(),
            BenchError::Invalid(_) => "invalid_config",
            BenchError::Infeasible(_) => "infeasible",
            BenchError::Stage { .. } => "stage_failed",
            BenchError::Io(_) => "io",
            BenchError::Json(_) => "json",
        }
    }

    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        BenchError::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Mixes a run-level seed into a component seed; run seed 0 leaves the
/// component seed unchanged.
pub fn derive_seed(run_seed: u64, local: u64) -> u64 {
    local ^ run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
