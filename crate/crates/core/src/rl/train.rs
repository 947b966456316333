//! Trials, the phase training loop, success filtering and the ablation evaluator.

use super::obs::{build_observation, ObsMode};
use super::td3::{clamp_residual, td3_update, Actor, ReplayBuffer, Td3Agent, Transition};
use super::RlError;
use crate::dataset::GraspRecord;
use crate::seeding::{derived_rng, tag};
use crate::sim::{sample_robot_pose, GraspEnv, ObjectId, HAND_JOINTS, REWARD_SUCCESS};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseMode {
    Static,
    Random,
}

impl std::str::FromStr for PoseMode {
    type Err = RlError;
    fn from_str(s: &str) -> Result<Self, RlError> {
        match s {
            "static" => Ok(PoseMode::Static),
            "random" => Ok(PoseMode::Random),
            other => Err(RlError::InvalidParams(format!("unknown pose mode `{other}`"))),
        }
    }
}

/// Anything that maps an RL observation to a residual for a given object.
pub trait ResidualPolicy: Sync {
    fn residual(&self, object: ObjectId, obs: &[f64]) -> Result<[f64; HAND_JOINTS], RlError>;
}

/// The untrained baseline: no correction.
pub struct ZeroResidual;

impl ResidualPolicy for ZeroResidual {
    fn residual(&self, _: ObjectId, _: &[f64]) -> Result<[f64; HAND_JOINTS], RlError> {
        Ok([0.0; HAND_JOINTS])
    }
}

impl ResidualPolicy for Actor {
    fn residual(&self, _: ObjectId, obs: &[f64]) -> Result<[f64; HAND_JOINTS], RlError> {
        self.act(obs)
    }
}

impl ResidualPolicy for Td3Agent {
    fn residual(&self, _: ObjectId, obs: &[f64]) -> Result<[f64; HAND_JOINTS], RlError> {
        self.act(obs)
    }
}

/// One actor per object.
impl ResidualPolicy for BTreeMap<ObjectId, Actor> {
    fn residual(&self, object: ObjectId, obs: &[f64]) -> Result<[f64; HAND_JOINTS], RlError> {
        self.get(&object).ok_or_else(|| RlError::MissingPolicy(object.to_string()))?.act(obs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub transition: Transition,
    /// The object overlapped the open hand at placement.
    pub aborted: bool,
    pub deviation: f64,
}

/// Arm joints for a trial in the given mode.
pub fn trial_arm<R: Rng + ?Sized>(env: &GraspEnv, mode: PoseMode, rng: &mut R) -> Result<[f64; 3], RlError> {
    Ok(match mode {
        PoseMode::Static => env.static_arm(),
        PoseMode::Random => sample_robot_pose(&env.pose_spec, env.hand(), env.protocol.open_hand, rng)?.arm(),
    })
}

/// Runs the grasp timeline for `record`. The observation is taken once the hand
/// has reached the dataset targets and `policy` maps it to the residual.
pub fn run_grasp_trial<R, P>(
    env: &GraspEnv,
    record: &GraspRecord,
    mode: PoseMode,
    mut policy: P,
    rng: &mut R,
) -> Result<TrialResult, RlError>
where
    R: Rng + ?Sized,
    P: FnMut(&[f64]) -> Result<[f64; HAND_JOINTS], RlError>,
{
    let world = env.world(record.object_id)?;
    let arm = trial_arm(env, mode, rng)?;
    let targets = record.hand_joint_targets;
    let (placed, closed) = world.begin_grasp(arm, &record.rel_pose, targets, &env.protocol)?;
    let Some(closed) = closed else {
        let obs = build_observation(world, &placed.state, placed.initial_object_pos, Some(record), ObsMode::Rl)?.to_vec();
        return Ok(TrialResult {
            transition: Transition { next_obs: obs.clone(), obs, action: [0.0; HAND_JOINTS], reward: -1.0, done: true },
            aborted: true,
            deviation: f64::INFINITY,
        });
    };
    let obs = build_observation(world, &closed, placed.initial_object_pos, Some(record), ObsMode::Rl)?.to_vec();
    let action = policy(&obs)?;
    let out = world.finish_grasp(&placed, &closed, targets, action, 0.0, &env.protocol)?;
    Ok(TrialResult {
        transition: Transition { next_obs: obs.clone(), obs, action, reward: out.reward, done: true },
        aborted: false,
        deviation: out.deviation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    /// Noiseless evaluations per record after each epoch.
    pub k_eval: usize,
    /// TD3 updates after each training trial, once the buffer holds a batch.
    pub updates_per_trial: usize,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self { epochs: 40, episodes_per_epoch: 75, k_eval: 3, updates_per_trial: 1 }
    }
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if self.epochs == 0 || self.episodes_per_epoch == 0 || self.k_eval == 0 {
            return Err(RlError::InvalidParams("epochs, episodes_per_epoch and k_eval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub mean_reward: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResult {
    /// Success rate of each record in the final evaluation, keyed by record id.
    pub per_record_success: BTreeMap<String, f64>,
    pub curve: Vec<EpochMetrics>,
}

/// Evaluates every record `k` times without exploration noise. Trials are
/// independent and seeded by (seed, epoch, record, repeat).
pub fn evaluate_records(
    env: &GraspEnv,
    policy: &dyn ResidualPolicy,
    records: &[GraspRecord],
    mode: PoseMode,
    k: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<f64>>, RlError> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            (0..k)
                .map(|rep| {
                    let mut rng = derived_rng(seed, &[tag("eval"), epoch, i as u64, rep as u64]);
                    let t = run_grasp_trial(env, r, mode, |o| policy.residual(r.object_id, o), &mut rng)?;
                    Ok(t.transition.reward)
                })
                .collect()
        })
        .collect()
}

/// Trains `agent` on `records`, cycling through them, with Gaussian
/// exploration noise; evaluates after every epoch.
pub fn train_phase(
    env: &GraspEnv,
    agent: &mut Td3Agent,
    records: &[GraspRecord],
    mode: PoseMode,
    cfg: &PhaseConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<PhaseResult, RlError> {
    if records.is_empty() {
        return Err(RlError::EmptyRecords);
    }
    cfg.validate()?;
    if agent.obs_dim() != ObsMode::Rl.width() {
        return Err(RlError::InvalidParams(format!("agent observation width {}", agent.obs_dim())));
    }
    let hp = agent.hp.clone();
    let noise = Normal::new(0.0, hp.exploration_sigma).map_err(|e| RlError::InvalidParams(e.to_string()))?;
    let mut rng = derived_rng(seed, &[tag("train")]);
    let mut buffer = ReplayBuffer::new(hp.buffer_capacity)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut last = Vec::new();
    let mut episode = 0usize;
    for epoch in 0..cfg.epochs {
        for _ in 0..cfg.episodes_per_epoch {
            let record = &records[episode % records.len()];
            episode += 1;
            let trial = {
                let agent_ref = &*agent;
                let mut noise_rng = derived_rng(seed, &[tag("noise"), episode as u64]);
                run_grasp_trial(
                    env,
                    record,
                    mode,
                    |o| {
                        let mut a = agent_ref.actor.act(o)?;
                        for v in a.iter_mut() {
                            *v += noise.sample(&mut noise_rng);
                        }
                        clamp_residual(&mut a, hp.r_max);
                        Ok(a)
                    },
                    &mut rng,
                )?
            };
            if !trial.aborted {
                buffer.push(trial.transition);
            }
            if buffer.len() >= hp.batch_size {
                for _ in 0..cfg.updates_per_trial {
                    td3_update(agent, &buffer, &mut rng)?;
                }
            }
        }
        let rewards = evaluate_records(env, &*agent, records, mode, cfg.k_eval, seed, epoch as u64)?;
        let flat: Vec<f64> = rewards.iter().flatten().copied().collect();
        let m = EpochMetrics {
            epoch: epoch + 1,
            mean_reward: flat.iter().sum::<f64>() / flat.len() as f64,
            success_rate: flat.iter().filter(|r| **r == REWARD_SUCCESS).count() as f64 / flat.len() as f64,
        };
        on_epoch(&m);
        curve.push(m);
        last = rewards;
    }
    let per_record_success = records
        .iter()
        .zip(&last)
        .map(|(r, rs)| {
            let s = rs.iter().filter(|x| **x == REWARD_SUCCESS).count() as f64 / rs.len() as f64;
            (r.record_id.clone(), s)
        })
        .collect();
    Ok(PhaseResult { per_record_success, curve })
}

/// Keeps records whose success rate reaches `threshold`, in input order.
pub fn filter_by_success(
    records: &[GraspRecord],
    success: &BTreeMap<String, f64>,
    threshold: f64,
) -> Result<Vec<GraspRecord>, RlError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(RlError::InvalidParams(format!("threshold {threshold} outside [0, 1]")));
    }
    let mut out = Vec::new();
    for r in records {
        let s = success.get(&r.record_id).ok_or_else(|| RlError::MissingSuccess(r.record_id.clone()))?;
        if *s >= threshold {
            out.push(r.clone());
        }
    }
    Ok(out)
}

/// Success fraction of `n_trials` random-pose trials cycling over `records`.
pub fn ablation_eval(
    env: &GraspEnv,
    records: &[GraspRecord],
    policy: &dyn ResidualPolicy,
    n_trials: usize,
    seed: u64,
) -> Result<f64, RlError> {
    if n_trials == 0 {
        return Err(RlError::InvalidParams("n_trials must be positive".into()));
    }
    if records.is_empty() {
        return Err(RlError::EmptyRecords);
    }
    let rewards: Vec<f64> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let r = &records[i % records.len()];
            let mut rng = derived_rng(seed, &[tag("ablation"), i as u64]);
            let t = run_grasp_trial(env, r, PoseMode::Random, |o| policy.residual(r.object_id, o), &mut rng)?;
            Ok(t.transition.reward)
        })
        .collect::<Result<_, RlError>>()?;
    Ok(rewards.iter().filter(|r| **r == REWARD_SUCCESS).count() as f64 / n_trials as f64)
}
