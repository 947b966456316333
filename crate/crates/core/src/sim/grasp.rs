//! The grasp timeline shared by replay, RL trials, recording and policy rollouts:
//! set the robot pose, place the object under zero gravity, drive the hand,
//! then switch gravity on and run the drop test.

use super::hand::{HandModel, JointVector, RobotPoseSpec, ARM_JOINTS, HAND_JOINTS};
use super::shape::{ObjectId, ObjectShape};
use super::world::{place_object_relative, GraspWorld, SimParams, WorldState, REWARD_FAILURE};
use super::SimError;
use crate::geom::{Pose2, Vec2};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraspProtocol {
    /// Pre-grasp hand configuration the fingers start from.
    pub open_hand: [f64; HAND_JOINTS],
    /// Largest per-step joint change while driving the hand in trials.
    pub drive_step: f64,
    /// Zero-gravity steps after the hand stops, before gravity is enabled.
    pub settle_steps: usize,
}

impl Default for GraspProtocol {
    fn default() -> Self {
        Self { open_hand: [-0.15, 0.2, -0.15, 0.2, -0.15, 0.2], drive_step: 0.01, settle_steps: 10 }
    }
}

impl GraspProtocol {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.drive_step > 0.0 && self.drive_step.is_finite()) {
            return Err(SimError::InvalidParams(format!("drive_step {} must be positive", self.drive_step)));
        }
        if self.open_hand.iter().any(|a| !a.is_finite()) {
            return Err(SimError::InvalidParams("open_hand must be finite".into()));
        }
        Ok(())
    }
}

/// Joint waypoints from `start` to `target`, each joint moving at most `max_step`
/// per waypoint. Always at least one waypoint; the last equals `target` exactly.
pub fn clamped_waypoints(
    start: &[f64; HAND_JOINTS],
    target: &[f64; HAND_JOINTS],
    max_step: f64,
) -> Vec<[f64; HAND_JOINTS]> {
    let max_delta = start.iter().zip(target).map(|(s, t)| (t - s).abs()).fold(0.0, f64::max);
    let n = ((max_delta / max_step - 1e-9).ceil() as usize).max(1);
    (1..=n)
        .map(|k| {
            if k == n {
                return *target;
            }
            let mut w = [0.0; HAND_JOINTS];
            for j in 0..HAND_JOINTS {
                let d = target[j] - start[j];
                w[j] = start[j] + d.signum() * d.abs().min(k as f64 * max_step);
            }
            w
        })
        .collect()
}

/// Moves each joint toward `target` by at most `max_step`.
pub fn clamp_toward(
    current: &[f64; HAND_JOINTS],
    target: &[f64; HAND_JOINTS],
    max_step: f64,
) -> [f64; HAND_JOINTS] {
    let mut out = *current;
    for j in 0..HAND_JOINTS {
        out[j] = current[j] + (target[j] - current[j]).clamp(-max_step, max_step);
    }
    out
}

/// Scene right after zero-gravity placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub state: WorldState,
    pub initial_object_pos: Vec2,
    /// The object overlapped the open hand.
    pub collided: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspOutcome {
    pub reward: f64,
    pub aborted: bool,
    pub deviation: f64,
    pub initial_object_pos: Vec2,
    /// State once the hand has reached the dataset targets (before the residual).
    pub closed_state: WorldState,
    pub final_state: WorldState,
}

impl GraspWorld {
    /// Sets the robot pose with the hand open and places the object at
    /// `rel_pose` in the hand-base frame, at rest and without gravity.
    pub fn place(&self, arm: [f64; ARM_JOINTS], open_hand: [f64; HAND_JOINTS], rel_pose: &Pose2) -> Placement {
        let joints = JointVector::new(arm, open_hand);
        let base = self.hand.hand_base(&arm);
        let pose = place_object_relative(&base, rel_pose);
        let state = WorldState::at_rest(joints, pose);
        Placement {
            state,
            initial_object_pos: pose.translation(),
            collided: self.collides(&joints, &pose),
        }
    }

    /// One kinematic control step: set the hand joints, then integrate the object once.
    pub fn control_step(&self, state: &WorldState, hand: [f64; HAND_JOINTS]) -> Result<WorldState, SimError> {
        let mut s = *state;
        s.joints = s.joints.with_hand(self.hand.clamp_hand(hand));
        self.step(&s)
    }

    /// Drives the hand along clamped waypoints to `target`. `on_step` sees the
    /// state before each step and the waypoint about to be commanded.
    pub fn drive_hand<F>(
        &self,
        state: &WorldState,
        target: [f64; HAND_JOINTS],
        max_step: f64,
        mut on_step: F,
    ) -> Result<WorldState, SimError>
    where
        F: FnMut(&WorldState, &[f64; HAND_JOINTS]),
    {
        let target = self.hand.clamp_hand(target);
        let mut s = *state;
        for w in clamped_waypoints(&s.joints.hand(), &target, max_step) {
            on_step(&s, &w);
            s = self.control_step(&s, w)?;
        }
        Ok(s)
    }

    pub fn settle(&self, state: &WorldState, steps: usize) -> Result<WorldState, SimError> {
        let mut s = *state;
        for _ in 0..steps {
            s = self.step(&s)?;
        }
        Ok(s)
    }

    /// Places the object and drives the hand to `targets`. The closed state is
    /// `None` when the object overlapped the open hand at placement.
    pub fn begin_grasp(
        &self,
        arm: [f64; ARM_JOINTS],
        rel_pose: &Pose2,
        targets: [f64; HAND_JOINTS],
        protocol: &GraspProtocol,
    ) -> Result<(Placement, Option<WorldState>), SimError> {
        let placed = self.place(arm, protocol.open_hand, rel_pose);
        if placed.collided {
            return Ok((placed, None));
        }
        let closed = self.drive_hand(&placed.state, targets, protocol.drive_step, |_, _| {})?;
        Ok((placed, Some(closed)))
    }

    /// Applies `residual` on top of `targets`, settles, then runs the drop test
    /// at `tilt` measured against the placement height.
    pub fn finish_grasp(
        &self,
        placed: &Placement,
        closed: &WorldState,
        targets: [f64; HAND_JOINTS],
        residual: [f64; HAND_JOINTS],
        tilt: f64,
        protocol: &GraspProtocol,
    ) -> Result<GraspOutcome, SimError> {
        let mut corrected = [0.0; HAND_JOINTS];
        for j in 0..HAND_JOINTS {
            corrected[j] = targets[j] + residual[j];
        }
        let s = self.drive_hand(closed, corrected, protocol.drive_step, |_, _| {})?;
        let s = self.settle(&s, protocol.settle_steps)?;
        let out = self.drop_test_from(&s, tilt, placed.initial_object_pos.y)?;
        Ok(GraspOutcome {
            reward: out.reward,
            aborted: false,
            deviation: out.deviation,
            initial_object_pos: placed.initial_object_pos,
            closed_state: *closed,
            final_state: out.final_state,
        })
    }

    /// Full trial: placement, drive to `targets`, apply `residual`, settle,
    /// then the drop test at `tilt` measured against the placement height.
    pub fn run_grasp(
        &self,
        arm: [f64; ARM_JOINTS],
        rel_pose: &Pose2,
        targets: [f64; HAND_JOINTS],
        residual: [f64; HAND_JOINTS],
        tilt: f64,
        protocol: &GraspProtocol,
    ) -> Result<GraspOutcome, SimError> {
        match self.begin_grasp(arm, rel_pose, targets, protocol)? {
            (placed, Some(closed)) => self.finish_grasp(&placed, &closed, targets, residual, tilt, protocol),
            (placed, None) => Ok(GraspOutcome::aborted(&placed)),
        }
    }
}

impl GraspOutcome {
    /// Outcome of a trial whose placement collided.
    pub fn aborted(placed: &Placement) -> Self {
        Self {
            reward: REWARD_FAILURE,
            aborted: true,
            deviation: f64::INFINITY,
            initial_object_pos: placed.initial_object_pos,
            closed_state: placed.state,
            final_state: placed.state,
        }
    }
}

/// Per-object worlds sharing one hand model, constants and protocol.
#[derive(Debug, Clone)]
pub struct GraspEnv {
    worlds: Vec<GraspWorld>,
    pub protocol: GraspProtocol,
    pub pose_spec: RobotPoseSpec,
}

impl GraspEnv {
    pub fn new(
        hand: &HandModel,
        params: &SimParams,
        protocol: &GraspProtocol,
        pose_spec: &RobotPoseSpec,
        shapes: &[ObjectShape],
    ) -> Result<Self, SimError> {
        hand.validate()?;
        params.validate()?;
        protocol.validate()?;
        pose_spec.static_pose(hand, protocol.open_hand)?;
        let worlds = shapes
            .iter()
            .map(|s| GraspWorld::new(hand.clone(), s.clone(), params.clone()))
            .collect();
        Ok(Self { worlds, protocol: protocol.clone(), pose_spec: *pose_spec })
    }

    pub fn world(&self, id: ObjectId) -> Result<&GraspWorld, SimError> {
        self.worlds
            .iter()
            .find(|w| w.shape.id == id)
            .ok_or_else(|| SimError::UnknownObject(id.to_string()))
    }

    pub fn hand(&self) -> &HandModel {
        &self.worlds[0].hand
    }

    pub fn static_arm(&self) -> [f64; ARM_JOINTS] {
        let mut arm = [0.0; ARM_JOINTS];
        arm.copy_from_slice(&self.pose_spec.center);
        arm
    }

    /// Copy of this environment with a different hand model.
    pub fn with_hand(&self, hand: &HandModel) -> Self {
        let worlds = self
            .worlds
            .iter()
            .map(|w| GraspWorld::new(hand.clone(), w.shape.clone(), w.params.clone()))
            .collect();
        Self { worlds, protocol: self.protocol.clone(), pose_spec: self.pose_spec }
    }
}
