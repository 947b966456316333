//! Residual-action reinforcement learning over seed grasps and recording of
//! the enhanced dataset.

pub mod obs;
pub mod record;
pub mod td3;
pub mod train;

pub use obs::{assemble_observation, build_observation, ObsMode, Observation, OBS_WIDTH_DIFFUSION, OBS_WIDTH_RL};
pub use record::{load_episodes, record_enhanced_dataset, save_episodes, DiscardCounts, Episode, RecordConfig, Recording, Step};
pub use td3::{clamp_residual, td3_update, td_target, Actor, ReplayBuffer, Td3Agent, Td3Losses, Td3Params, Transition};
pub use train::{
    ablation_eval, evaluate_records, filter_by_success, run_grasp_trial, train_phase, trial_arm, EpochMetrics,
    PhaseConfig, PhaseResult, PoseMode, ResidualPolicy, TrialResult, ZeroResidual,
};

use crate::nn::NnError;
use crate::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("an RL observation needs the dataset record")]
    MissingRecord,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no records to train or evaluate on")]
    EmptyRecords,
    #[error("replay buffer holds {len} transitions, batch needs {batch}")]
    BufferTooSmall { len: usize, batch: usize },
    #[error("no success entry for record `{0}`")]
    MissingSuccess(String),
    #[error("no policy for object `{0}`")]
    MissingPolicy(String),
    #[error("no successful episode could be recorded for `{0}`")]
    NoEpisodes(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
}
