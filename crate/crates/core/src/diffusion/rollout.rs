//! Receding-horizon execution: plan a block, execute its head, re-plan.

use super::policy::DiffusionPolicy;
use super::window::history_from;
use super::DiffusionError;
use crate::geom::Pose2;
use crate::rl::{build_observation, ObsMode};
use crate::seeding::derived_rng;
use crate::sim::{clamp_toward, GraspEnv, ObjectId, WorldState, ARM_JOINTS, HAND_JOINTS, REWARD_FAILURE};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::Instant;

/// Source of action blocks, one per observation history.
pub trait ActionPlanner {
    fn obs_horizon(&self) -> usize;
    fn plan(&mut self, histories: &[&[f64]], rngs: &mut [ChaCha8Rng]) -> Result<Vec<Vec<[f64; HAND_JOINTS]>>, DiffusionError>;
}

impl ActionPlanner for &DiffusionPolicy {
    fn obs_horizon(&self) -> usize {
        self.obs_horizon
    }

    fn plan(&mut self, histories: &[&[f64]], rngs: &mut [ChaCha8Rng]) -> Result<Vec<Vec<[f64; HAND_JOINTS]>>, DiffusionError> {
        self.sample_actions(histories, rngs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutSetup {
    pub object: ObjectId,
    pub arm: [f64; ARM_JOINTS],
    /// Object pose in the hand-base frame.
    pub rel_pose: Pose2,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRollout {
    pub executed: Vec<[f64; HAND_JOINTS]>,
    /// Wall-clock time of each planning cycle (milliseconds).
    pub latencies_ms: Vec<f64>,
    pub cycles: usize,
    pub reward: f64,
    /// The object overlapped the open hand at placement.
    pub aborted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutParams {
    pub exec_horizon: usize,
    pub step_cap: usize,
    /// Largest per-step joint change the environment allows.
    pub clamp: f64,
}

struct Live {
    object: ObjectId,
    state: WorldState,
    initial_y: f64,
    initial_pos: crate::geom::Vec2,
    observations: Vec<Vec<f64>>,
    rollout: PolicyRollout,
    rng: ChaCha8Rng,
}

/// Runs all setups in lockstep so each planning cycle is one batched call.
pub fn receding_horizon_rollout<P: ActionPlanner>(
    env: &GraspEnv,
    setups: &[RolloutSetup],
    planner: &mut P,
    params: &RolloutParams,
) -> Result<Vec<PolicyRollout>, DiffusionError> {
    if params.exec_horizon == 0 || params.step_cap == 0 || !(params.clamp > 0.0) {
        return Err(DiffusionError::InvalidParams("exec_horizon, step_cap and clamp must be positive".into()));
    }
    let mut slots: Vec<Option<Live>> = Vec::with_capacity(setups.len());
    let mut done: Vec<Option<PolicyRollout>> = vec![None; setups.len()];
    for (i, s) in setups.iter().enumerate() {
        let world = env.world(s.object)?;
        let placed = world.place(s.arm, env.protocol.open_hand, &s.rel_pose);
        if placed.collided {
            done[i] = Some(PolicyRollout {
                executed: vec![],
                latencies_ms: vec![],
                cycles: 0,
                reward: REWARD_FAILURE,
                aborted: true,
            });
            slots.push(None);
            continue;
        }
        let obs = build_observation(world, &placed.state, placed.initial_object_pos, None, ObsMode::Diffusion)?;
        slots.push(Some(Live {
            object: s.object,
            state: placed.state,
            initial_y: placed.initial_object_pos.y,
            initial_pos: placed.initial_object_pos,
            observations: vec![obs.to_vec()],
            rollout: PolicyRollout { executed: vec![], latencies_ms: vec![], cycles: 0, reward: 0.0, aborted: false },
            rng: derived_rng(s.seed, &[]),
        }));
    }
    let active: Vec<usize> = (0..setups.len()).filter(|i| slots[*i].is_some()).collect();
    let h = planner.obs_horizon();
    let mut executed = 0;
    while executed < params.step_cap && !active.is_empty() {
        let histories: Vec<Vec<f64>> = active
            .iter()
            .map(|&i| history_from(&slots[i].as_ref().expect("active").observations, h))
            .collect();
        let refs: Vec<&[f64]> = histories.iter().map(|v| v.as_slice()).collect();
        let mut rngs: Vec<ChaCha8Rng> = active.iter().map(|&i| slots[i].as_ref().expect("active").rng.clone()).collect();
        let started = Instant::now();
        let blocks = planner.plan(&refs, &mut rngs)?;
        let latency = started.elapsed().as_secs_f64() * 1e3;
        let n_exec = params.exec_horizon.min(params.step_cap - executed);
        let mut live: Vec<&mut Live> = slots.iter_mut().filter_map(|s| s.as_mut()).collect();
        live.par_iter_mut()
            .zip(blocks.par_iter())
            .zip(rngs.into_par_iter())
            .map(|((l, block), rng)| {
                l.rng = rng;
                l.rollout.cycles += 1;
                l.rollout.latencies_ms.push(latency);
                let world = env.world(l.object)?;
                for a in block.iter().take(n_exec) {
                    let cmd = clamp_toward(&l.state.joints.hand(), a, params.clamp);
                    l.state = world.control_step(&l.state, cmd)?;
                    l.rollout.executed.push(cmd);
                    l.observations.push(build_observation(world, &l.state, l.initial_pos, None, ObsMode::Diffusion)?.to_vec());
                }
                Ok(())
            })
            .collect::<Result<(), DiffusionError>>()?;
        executed += n_exec;
    }
    let finals: Vec<(usize, PolicyRollout)> = slots
        .into_par_iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|l| (i, l)))
        .map(|(i, mut l)| {
            let world = env.world(setups[i].object)?;
            let s = world.settle(&l.state, env.protocol.settle_steps)?;
            l.rollout.reward = world.drop_test_from(&s, 0.0, l.initial_y)?.reward;
            Ok((i, l.rollout))
        })
        .collect::<Result<_, DiffusionError>>()?;
    for (i, r) in finals {
        done[i] = Some(r);
    }
    Ok(done.into_iter().map(|r| r.expect("every rollout finished")).collect())
}
