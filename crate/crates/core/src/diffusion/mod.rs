//! Diffusion policy: noise schedule, training windows, the denoiser and
//! receding-horizon execution.

pub mod normalize;
pub mod policy;
pub mod rollout;
pub mod schedule;
pub mod train;
pub mod window;

pub use normalize::Normalizer;
pub use policy::{clipped_reverse_mean, ddpm_sample, reverse_mean, DiffusionConfig, DiffusionPolicy, NoiseModel};
pub use rollout::{receding_horizon_rollout, ActionPlanner, PolicyRollout, RolloutParams, RolloutSetup};
pub use schedule::{add_noise, cosine_schedule, DiffusionSchedule};
pub use train::{success_rate, train_policy, validation_setups};
pub use window::{build_training_windows, history_from, TrainingWindow};

use crate::nn::NnError;
use crate::rl::RlError;
use crate::sampler::SamplerError;
use crate::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no training data")]
    EmptyDataset,
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}
