//! End-to-end orchestration: stages, their on-disk artifacts, and the report.

mod artifacts;
mod config;
mod report;
mod run;

pub use artifacts::{RunDir, RunLock};
pub use config::{AblationStage, EvalStage, PipelineConfig, RlStage, SeedGenStage};
pub use report::{
    build_report, render_text, retention_ratios, AblationRow, DiffusionCurve, RetentionRow, RlCurves, RunReport,
    ValidationPoint,
};
pub use run::{load_sampling_bounds, run_pipeline, run_stage, sample_poses, stage_complete};

use std::fmt;
use std::str::FromStr;

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    GenSeed,
    Preselect,
    TrainRlStatic,
    TrainRlRandom,
    Record,
    Stats,
    TrainDiffusion,
    Eval,
    Ablate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 10] = [
        Stage::GenSeed,
        Stage::Preselect,
        Stage::TrainRlStatic,
        Stage::TrainRlRandom,
        Stage::Record,
        Stage::Stats,
        Stage::TrainDiffusion,
        Stage::Eval,
        Stage::Ablate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenSeed => "gen-seed",
            Stage::Preselect => "preselect",
            Stage::TrainRlStatic => "train-rl-static",
            Stage::TrainRlRandom => "train-rl-random",
            Stage::Record => "record",
            Stage::Stats => "stats",
            Stage::TrainDiffusion => "train-diffusion",
            Stage::Eval => "eval",
            Stage::Ablate => "ablate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown stage `{s}`")))
    }
}

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("run directory {0} is locked by another process (remove run.lock if it is stale)")]
    Locked(String),
    #[error("run directory was created with config {existing}, this config hashes to {requested}")]
    ConfigMismatch { existing: String, requested: String },
    #[error("missing artifacts; re-run stages: {}", list(.0))]
    Missing(Vec<Stage>),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: Stage, source: BoxError },
}

fn list(stages: &[Stage]) -> String {
    stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ")
}

impl PipelineError {
    pub fn stage(stage: Stage, e: impl Into<BoxError>) -> Self {
        PipelineError::Stage { stage, source: e.into() }
    }

    /// Validation problems are the caller's fault; everything else is a stage failure.
    pub fn is_validation(&self) -> bool {
        matches!(self, PipelineError::Config(_) | PipelineError::ConfigMismatch { .. })
    }
}
