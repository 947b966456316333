//! The training loop and validation on freshly sampled object poses.

use super::policy::DiffusionPolicy;
use super::rollout::{receding_horizon_rollout, RolloutParams, RolloutSetup};
use super::window::{build_training_windows, TrainingWindow};
use super::DiffusionError;
use crate::rl::{trial_arm, Episode, PoseMode};
use crate::sampler::{sample_valid_pose, SamplingBounds};
use crate::seeding::{derived_rng, tag};
use crate::sim::{GraspEnv, ObjectId, REWARD_SUCCESS};
use rand::Rng;

/// Trains for `iterations` steps on uniformly drawn windows of `episodes`.
/// `on_step(iteration, loss, policy)` runs after every step, 1-based; the
/// caller uses it for logging and periodic validation.
pub fn train_policy(
    policy: &mut DiffusionPolicy,
    episodes: &[Episode],
    iterations: usize,
    batch_size: usize,
    seed: u64,
    mut on_step: impl FnMut(usize, f64, &DiffusionPolicy) -> Result<(), DiffusionError>,
) -> Result<(), DiffusionError> {
    if batch_size == 0 {
        return Err(DiffusionError::InvalidParams("batch_size must be positive".into()));
    }
    let windows: Vec<TrainingWindow> = episodes
        .iter()
        .flat_map(|e| build_training_windows(e, policy.obs_horizon, policy.pred_horizon))
        .collect();
    if windows.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    let mut rng = derived_rng(seed, &[tag("diffusion-train")]);
    for it in 1..=iterations {
        let batch: Vec<&TrainingWindow> =
            (0..batch_size).map(|_| &windows[rng.random_range(0..windows.len())]).collect();
        let loss = policy.train_step(&batch, &mut rng)?;
        on_step(it, loss, policy)?;
    }
    Ok(())
}

/// Draws `n` validation setups: an object pose from `bounds` and a robot pose
/// (random or the static one). Setup `i` depends only on (seed, object, i).
pub fn validation_setups(
    env: &GraspEnv,
    object: ObjectId,
    bounds: &SamplingBounds,
    n: usize,
    randomize_robot_pose: bool,
    max_tries: usize,
    seed: u64,
) -> Result<Vec<RolloutSetup>, DiffusionError> {
    let world = env.world(object)?;
    let mode = if randomize_robot_pose { PoseMode::Random } else { PoseMode::Static };
    (0..n as u64)
        .map(|i| {
            let mut rng = derived_rng(seed, &[tag("validation"), tag(object.as_str()), i]);
            let rel_pose = sample_valid_pose(bounds, world, env.protocol.open_hand, &mut rng, max_tries)?;
            let arm = trial_arm(env, mode, &mut rng)?;
            Ok(RolloutSetup { object, arm, rel_pose, seed: rng.random() })
        })
        .collect()
}

/// Fraction of `setups` whose rollout ends in a successful drop test.
pub fn success_rate(
    env: &GraspEnv,
    policy: &DiffusionPolicy,
    setups: &[RolloutSetup],
    step_cap: usize,
    clamp: f64,
) -> Result<f64, DiffusionError> {
    if setups.is_empty() {
        return Err(DiffusionError::InvalidParams("no validation setups".into()));
    }
    let params = RolloutParams { exec_horizon: policy.exec_horizon, step_cap, clamp };
    let out = receding_horizon_rollout(env, setups, &mut &*policy, &params)?;
    Ok(out.iter().filter(|r| r.reward == REWARD_SUCCESS).count() as f64 / out.len() as f64)
}
