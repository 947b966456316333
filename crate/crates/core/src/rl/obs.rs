//! Observation vectors shared by the RL agent and the diffusion policy.

use super::RlError;
use crate::dataset::GraspRecord;
use crate::geom::{Pose2, Vec2};
use crate::sim::{GraspWorld, WorldState, HAND_JOINTS, NUM_FINGERS, NUM_JOINTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObsMode {
    /// Includes the dataset joint targets.
    Rl,
    Diffusion,
}

impl ObsMode {
    pub fn width(self) -> usize {
        match self {
            ObsMode::Rl => OBS_WIDTH_RL,
            ObsMode::Diffusion => OBS_WIDTH_DIFFUSION,
        }
    }
}

pub const OBS_WIDTH_DIFFUSION: usize = NUM_JOINTS + 4 + 2 + 2 + 2 + 2 * NUM_FINGERS;
pub const OBS_WIDTH_RL: usize = OBS_WIDTH_DIFFUSION + HAND_JOINTS;

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub joint_angles: [f64; NUM_JOINTS],
    /// (x, y, cos θ, sin θ) in the hand-base frame.
    pub rel_object_pose: [f64; 4],
    pub initial_object_pos: [f64; 2],
    pub current_object_pos: [f64; 2],
    pub hand_base_pos: [f64; 2],
    pub fingertip_pos: [f64; 2 * NUM_FINGERS],
    pub dataset_joint_targets: Option<[f64; HAND_JOINTS]>,
}

impl Observation {
    pub fn mode(&self) -> ObsMode {
        if self.dataset_joint_targets.is_some() {
            ObsMode::Rl
        } else {
            ObsMode::Diffusion
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.mode().width());
        v.extend_from_slice(&self.joint_angles);
        v.extend_from_slice(&self.rel_object_pose);
        v.extend_from_slice(&self.initial_object_pos);
        v.extend_from_slice(&self.current_object_pos);
        v.extend_from_slice(&self.hand_base_pos);
        v.extend_from_slice(&self.fingertip_pos);
        if let Some(t) = &self.dataset_joint_targets {
            v.extend_from_slice(t);
        }
        v
    }
}

/// Assembles an observation from world-frame quantities.
pub fn assemble_observation(
    joints: [f64; NUM_JOINTS],
    hand_base: &Pose2,
    fingertips: &[Vec2; NUM_FINGERS],
    object_pose: &Pose2,
    initial_object_pos: Vec2,
    targets: Option<[f64; HAND_JOINTS]>,
) -> Observation {
    let rel = hand_base.inverse().compose(object_pose);
    let cur = object_pose.translation();
    let base = hand_base.translation();
    let mut tips = [0.0; 2 * NUM_FINGERS];
    for (f, p) in fingertips.iter().enumerate() {
        tips[2 * f] = p.x;
        tips[2 * f + 1] = p.y;
    }
    Observation {
        joint_angles: joints,
        rel_object_pose: [rel.x, rel.y, rel.theta.cos(), rel.theta.sin()],
        initial_object_pos: [initial_object_pos.x, initial_object_pos.y],
        current_object_pos: [cur.x, cur.y],
        hand_base_pos: [base.x, base.y],
        fingertip_pos: tips,
        dataset_joint_targets: targets,
    }
}

pub fn build_observation(
    world: &GraspWorld,
    state: &WorldState,
    initial_object_pos: Vec2,
    record: Option<&GraspRecord>,
    mode: ObsMode,
) -> Result<Observation, RlError> {
    let targets = match (mode, record) {
        (ObsMode::Rl, Some(r)) => Some(r.hand_joint_targets),
        (ObsMode::Rl, None) => return Err(RlError::MissingRecord),
        (ObsMode::Diffusion, _) => None,
    };
    let fk = world.hand.forward_kinematics(&state.joints);
    let obs = assemble_observation(
        state.joints.angles,
        &fk.hand_base,
        &fk.fingertips,
        &state.object_pose,
        initial_object_pos,
        targets,
    );
    if obs.to_vec().iter().any(|v| !v.is_finite()) {
        return Err(RlError::NonFinite("observation".into()));
    }
    Ok(obs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(base: Pose2, object: Pose2) -> Observation {
        let tips = [
            base.transform_point(Vec2::new(0.01, -0.1)),
            base.transform_point(Vec2::new(0.0, -0.12)),
            base.transform_point(Vec2::new(-0.02, -0.09)),
        ];
        assemble_observation([0.1; NUM_JOINTS], &base, &tips, &object, Vec2::new(0.3, 0.4), Some([0.2; 6]))
    }

    #[test]
    fn widths() {
        assert_eq!(OBS_WIDTH_RL, 31);
        assert_eq!(OBS_WIDTH_DIFFUSION, 25);
        let o = sample(Pose2::IDENTITY, Pose2::IDENTITY);
        assert_eq!(o.to_vec().len(), 31);
        let d = Observation { dataset_joint_targets: None, ..o };
        assert_eq!(d.to_vec().len(), 25);
    }

    #[test]
    fn object_at_base_origin() {
        let base = Pose2::new(0.4, -0.2, 0.7);
        let o = sample(base, base);
        for (a, b) in o.rel_object_pose.iter().zip([0.0, 0.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_fields_are_translation_invariant() {
        let base = Pose2::new(0.4, -0.2, 0.7);
        let obj = Pose2::new(0.45, -0.3, -1.1);
        let a = sample(base, obj);
        let shift = Pose2::new(1.0, 1.0, 0.0);
        let b = sample(shift.compose(&base), shift.compose(&obj));
        for (x, y) in a.rel_object_pose.iter().zip(&b.rel_object_pose) {
            assert!((x - y).abs() < 1e-12);
        }
        for i in 0..2 * NUM_FINGERS {
            let da = a.fingertip_pos[i] - a.hand_base_pos[i % 2];
            let db = b.fingertip_pos[i] - b.hand_base_pos[i % 2];
            assert!((da - db).abs() < 1e-12);
        }
    }
}
