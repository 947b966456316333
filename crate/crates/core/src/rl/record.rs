//! Recording the enhanced dataset: clamped joint trajectories toward the
//! corrected targets, logged step by step.

use super::obs::{build_observation, ObsMode};
use super::train::{trial_arm, PoseMode, ResidualPolicy};
use super::RlError;
use crate::dataset::GraspRecord;
use crate::seeding::{derived_rng, tag};
use crate::sim::{clamped_waypoints, GraspEnv, ObjectId, HAND_JOINTS, NUM_JOINTS, REWARD_SUCCESS};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub obs: Vec<f64>,
    /// Absolute hand-joint target commanded at this step.
    pub action: [f64; HAND_JOINTS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub record_id: String,
    pub object_id: ObjectId,
    pub robot_pose: [f64; NUM_JOINTS],
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecordConfig {
    pub episodes_per_object: usize,
    /// Largest per-step change of any hand joint (radians).
    pub clamp: f64,
    pub step_cap: usize,
    /// Attempts allowed per requested episode before giving up.
    pub max_attempts_factor: usize,
}

impl Default for RecordConfig {
    fn default() -> Self {
        Self { episodes_per_object: 200, clamp: 25e-4, step_cap: 400, max_attempts_factor: 5 }
    }
}

impl RecordConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.clamp > 0.0 && self.clamp.is_finite()) {
            return Err(RlError::InvalidParams(format!("clamp {} must be positive", self.clamp)));
        }
        if self.episodes_per_object == 0 || self.step_cap == 0 || self.max_attempts_factor == 0 {
            return Err(RlError::InvalidParams("episode count, step cap and attempt factor must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiscardCounts {
    pub collision: usize,
    pub step_cap: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub episodes: Vec<Episode>,
    pub discarded: DiscardCounts,
}

enum Attempt {
    Kept(Episode),
    Collision,
    StepCap,
    Dropped,
}

fn record_one(
    env: &GraspEnv,
    record: &GraspRecord,
    policy: &dyn ResidualPolicy,
    cfg: &RecordConfig,
    rng: &mut impl rand::Rng,
) -> Result<Attempt, RlError> {
    let world = env.world(record.object_id)?;
    let arm = trial_arm(env, PoseMode::Random, rng)?;
    let targets = record.hand_joint_targets;
    // Probe: close on the dataset targets to obtain the agent's observation.
    let (placed, closed) = world.begin_grasp(arm, &record.rel_pose, targets, &env.protocol)?;
    let Some(closed) = closed else {
        return Ok(Attempt::Collision);
    };
    let probe = build_observation(world, &closed, placed.initial_object_pos, Some(record), ObsMode::Rl)?;
    let residual = policy.residual(record.object_id, &probe.to_vec())?;
    let mut goal = [0.0; HAND_JOINTS];
    for j in 0..HAND_JOINTS {
        goal[j] = targets[j] + residual[j];
    }
    let goal = world.hand.clamp_hand(goal);
    if clamped_waypoints(&env.protocol.open_hand, &goal, cfg.clamp).len() > cfg.step_cap {
        return Ok(Attempt::StepCap);
    }
    let mut steps = Vec::new();
    let mut err = None;
    let s = world.drive_hand(&placed.state, goal, cfg.clamp, |state, w| {
        match build_observation(world, state, placed.initial_object_pos, None, ObsMode::Diffusion) {
            Ok(o) => steps.push(Step { obs: o.to_vec(), action: *w }),
            Err(e) => err = Some(e),
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let s = world.settle(&s, env.protocol.settle_steps)?;
    let out = world.drop_test_from(&s, 0.0, placed.initial_object_pos.y)?;
    if out.reward != REWARD_SUCCESS {
        return Ok(Attempt::Dropped);
    }
    Ok(Attempt::Kept(Episode {
        record_id: record.record_id.clone(),
        object_id: record.object_id,
        robot_pose: placed.state.joints.angles,
        steps,
    }))
}

/// Records `episodes_per_object` successful episodes for every object present
/// in `records`, cycling over that object's records in random robot poses.
pub fn record_enhanced_dataset(
    env: &GraspEnv,
    records: &[GraspRecord],
    policy: &dyn ResidualPolicy,
    cfg: &RecordConfig,
    seed: u64,
) -> Result<Recording, RlError> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(RlError::EmptyRecords);
    }
    let mut objects: Vec<ObjectId> = records.iter().map(|r| r.object_id).collect();
    objects.sort();
    objects.dedup();
    let mut episodes = Vec::new();
    let mut discarded = DiscardCounts::default();
    for obj in objects {
        let recs: Vec<&GraspRecord> = records.iter().filter(|r| r.object_id == obj).collect();
        let max_attempts = cfg.episodes_per_object * cfg.max_attempts_factor;
        let mut kept = 0;
        let mut next = 0;
        // Attempts run in fixed-size chunks; results are consumed in attempt order.
        while kept < cfg.episodes_per_object && next < max_attempts {
            let end = (next + cfg.episodes_per_object).min(max_attempts);
            let chunk: Vec<Attempt> = (next..end)
                .into_par_iter()
                .map(|a| {
                    let mut rng = derived_rng(seed, &[tag("record"), tag(obj.as_str()), a as u64]);
                    record_one(env, recs[a % recs.len()], policy, cfg, &mut rng)
                })
                .collect::<Result<_, RlError>>()?;
            next = end;
            for at in chunk {
                if kept == cfg.episodes_per_object {
                    break;
                }
                match at {
                    Attempt::Kept(e) => {
                        episodes.push(e);
                        kept += 1;
                    }
                    Attempt::Collision => discarded.collision += 1,
                    Attempt::StepCap => discarded.step_cap += 1,
                    Attempt::Dropped => discarded.dropped += 1,
                }
            }
        }
        if kept == 0 {
            return Err(RlError::NoEpisodes(obj.to_string()));
        }
    }
    Ok(Recording { episodes, discarded })
}

pub fn save_episodes(path: &Path, episodes: &[Episode]) -> Result<(), RlError> {
    let io = |e: std::io::Error| RlError::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for e in episodes {
        let line = serde_json::to_string(e).map_err(|e| RlError::Io(e.to_string()))?;
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn load_episodes(path: &Path) -> Result<Vec<Episode>, RlError> {
    let io = |e: std::io::Error| RlError::Io(format!("{}: {e}", path.display()));
    let f = std::io::BufReader::new(std::fs::File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Episode = serde_json::from_str(&line)
            .map_err(|e| RlError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if e.steps.is_empty() || e.steps.iter().any(|s| s.obs.len() != ObsMode::Diffusion.width()) {
            return Err(RlError::Io(format!("{}:{}: malformed episode", path.display(), i + 1)));
        }
        out.push(e);
    }
    Ok(out)
}
