//! Planar arm + three-finger hand: parameters, joint vectors and forward kinematics.

use super::SimError;
use crate::geom::{Pose2, Segment, Vec2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const ARM_JOINTS: usize = 3;
pub const HAND_JOINTS: usize = 6;
pub const NUM_JOINTS: usize = ARM_JOINTS + HAND_JOINTS;
pub const NUM_FINGERS: usize = 3;
/// Finger whose middle phalanx anchors the finger-distance metric.
pub const MIDDLE_FINGER: usize = 1;

/// Joint angles ordered arm(3) then hand(6); the hand block is
/// (proximal, distal) for each finger in turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointVector {
    pub angles: [f64; NUM_JOINTS],
}

impl JointVector {
    pub fn new(arm: [f64; ARM_JOINTS], hand: [f64; HAND_JOINTS]) -> Self {
        let mut angles = [0.0; NUM_JOINTS];
        angles[..ARM_JOINTS].copy_from_slice(&arm);
        angles[ARM_JOINTS..].copy_from_slice(&hand);
        Self { angles }
    }

    pub fn zeros() -> Self {
        Self { angles: [0.0; NUM_JOINTS] }
    }

    pub fn arm(&self) -> [f64; ARM_JOINTS] {
        let mut a = [0.0; ARM_JOINTS];
        a.copy_from_slice(&self.angles[..ARM_JOINTS]);
        a
    }

    pub fn hand(&self) -> [f64; HAND_JOINTS] {
        let mut h = [0.0; HAND_JOINTS];
        h.copy_from_slice(&self.angles[ARM_JOINTS..]);
        h
    }

    pub fn with_hand(&self, hand: [f64; HAND_JOINTS]) -> Self {
        Self::new(self.arm(), hand)
    }
}

/// Identifies the hand part a contact or collision belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HandPart {
    Palm,
    Phalanx { finger: u8, link: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandModel {
    pub arm_link_lengths: [f64; ARM_JOINTS],
    pub palm_half_width: f64,
    /// Attachment point of each finger along the palm (hand-frame x).
    pub finger_attach_offsets: [f64; NUM_FINGERS],
    pub phalanx_lengths: [[f64; 2]; NUM_FINGERS],
    pub phalanx_radius: f64,
    pub joint_limits: [[f64; 2]; NUM_JOINTS],
    /// +1 when positive flexion curls a finger toward +x of the hand frame, −1 otherwise.
    pub flex_sign: [f64; NUM_FINGERS],
    /// Calibration bias added to commanded hand joints before kinematics.
    pub joint_bias: [f64; HAND_JOINTS],
}

impl Default for HandModel {
    fn default() -> Self {
        let arm = [-PI, PI];
        let prox = [-0.6, 1.6];
        let dist = [-0.3, 1.8];
        Self {
            arm_link_lengths: [0.5, 0.4, 0.1],
            palm_half_width: 0.06,
            finger_attach_offsets: [-0.055, 0.042, 0.06],
            phalanx_lengths: [[0.05, 0.04], [0.055, 0.04], [0.045, 0.035]],
            phalanx_radius: 0.008,
            joint_limits: [arm, arm, arm, prox, dist, prox, dist, prox, dist],
            flex_sign: [1.0, -1.0, -1.0],
            joint_bias: [0.0; HAND_JOINTS],
        }
    }
}

impl HandModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let extra = [self.palm_half_width, self.phalanx_radius];
        let lengths = self
            .arm_link_lengths
            .iter()
            .chain(self.phalanx_lengths.iter().flatten())
            .chain(extra.iter());
        for &l in lengths {
            if !(l > 0.0 && l.is_finite()) {
                return Err(SimError::InvalidModel(format!("non-positive length {l}")));
            }
        }
        for (i, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(SimError::InvalidModel(format!("joint {i} limits {lo} >= {hi}")));
            }
        }
        for s in self.flex_sign {
            if s != 1.0 && s != -1.0 {
                return Err(SimError::InvalidModel(format!("flex sign {s} must be ±1")));
            }
        }
        Ok(())
    }

    pub fn with_joint_bias(&self, bias: [f64; HAND_JOINTS]) -> Self {
        Self { joint_bias: bias, ..self.clone() }
    }

    pub fn clamp_joints(&self, joints: &JointVector) -> JointVector {
        let mut out = *joints;
        for (a, [lo, hi]) in out.angles.iter_mut().zip(self.joint_limits.iter()) {
            *a = a.clamp(*lo, *hi);
        }
        out
    }

    pub fn clamp_hand(&self, hand: [f64; HAND_JOINTS]) -> [f64; HAND_JOINTS] {
        let mut out = hand;
        for (j, a) in out.iter_mut().enumerate() {
            let [lo, hi] = self.joint_limits[ARM_JOINTS + j];
            *a = a.clamp(lo, hi);
        }
        out
    }

    pub fn within_limits(&self, joints: &JointVector) -> bool {
        joints
            .angles
            .iter()
            .zip(self.joint_limits.iter())
            .all(|(a, [lo, hi])| a >= lo && a <= hi)
    }

    /// Hand base frame: the end of the last arm link.
    pub fn hand_base(&self, arm: &[f64; ARM_JOINTS]) -> Pose2 {
        let mut phi = 0.0;
        let mut p = Vec2::ZERO;
        for (q, l) in arm.iter().zip(self.arm_link_lengths.iter()) {
            phi += q;
            p += Vec2::new(phi.cos(), phi.sin()) * *l;
        }
        Pose2::new(p.x, p.y, phi)
    }

    pub fn forward_kinematics(&self, joints: &JointVector) -> HandKinematics {
        let mut arm_frames = [Pose2::IDENTITY; ARM_JOINTS];
        let mut phi = 0.0;
        let mut p = Vec2::ZERO;
        for k in 0..ARM_JOINTS {
            phi += joints.angles[k];
            arm_frames[k] = Pose2::new(p.x, p.y, phi);
            p += Vec2::new(phi.cos(), phi.sin()) * self.arm_link_lengths[k];
        }
        let hand_base = Pose2::new(p.x, p.y, phi);
        let palm_normal = hand_base.transform_vector(Vec2::new(0.0, -1.0));
        let palm_segment = Segment::new(
            hand_base.transform_point(Vec2::new(-self.palm_half_width, 0.0)),
            hand_base.transform_point(Vec2::new(self.palm_half_width, 0.0)),
        );

        let mut phalanx_frames = [[Pose2::IDENTITY; 2]; NUM_FINGERS];
        let mut phalanx_segments = [[Segment::new(Vec2::ZERO, Vec2::ZERO); 2]; NUM_FINGERS];
        let mut fingertips = [Vec2::ZERO; NUM_FINGERS];
        let hand = joints.hand();
        for f in 0..NUM_FINGERS {
            let s = self.flex_sign[f];
            let mut base = hand_base.transform_point(Vec2::new(self.finger_attach_offsets[f], 0.0));
            let mut psi = phi;
            for link in 0..2 {
                psi += s * (hand[2 * f + link] + self.joint_bias[2 * f + link]);
                let dir = Vec2::new(psi.sin(), -psi.cos());
                let tip = base + dir * self.phalanx_lengths[f][link];
                phalanx_frames[f][link] = Pose2::new(base.x, base.y, psi);
                phalanx_segments[f][link] = Segment::new(base, tip);
                base = tip;
            }
            fingertips[f] = base;
        }

        HandKinematics {
            arm_frames,
            hand_base,
            palm_center: hand_base.translation(),
            palm_normal,
            palm_segment,
            phalanx_frames,
            phalanx_segments,
            fingertips,
        }
    }

    /// All collision capsules: the palm followed by every phalanx.
    pub fn capsules(&self, joints: &JointVector) -> Vec<Capsule> {
        self.forward_kinematics(joints).capsules(self.phalanx_radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub segment: Segment,
    pub radius: f64,
    pub part: HandPart,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandKinematics {
    /// Frame at the start of each arm link.
    pub arm_frames: [Pose2; ARM_JOINTS],
    pub hand_base: Pose2,
    pub palm_center: Vec2,
    pub palm_normal: Vec2,
    pub palm_segment: Segment,
    /// Frame at the base of each phalanx; the phalanx extends along local −y.
    pub phalanx_frames: [[Pose2; 2]; NUM_FINGERS],
    pub phalanx_segments: [[Segment; 2]; NUM_FINGERS],
    pub fingertips: [Vec2; NUM_FINGERS],
}

impl HandKinematics {
    pub fn capsules(&self, radius: f64) -> Vec<Capsule> {
        let mut out = Vec::with_capacity(1 + 2 * NUM_FINGERS);
        out.push(Capsule { segment: self.palm_segment, radius, part: HandPart::Palm });
        for f in 0..NUM_FINGERS {
            for link in 0..2 {
                out.push(Capsule {
                    segment: self.phalanx_segments[f][link],
                    radius,
                    part: HandPart::Phalanx { finger: f as u8, link: link as u8 },
                });
            }
        }
        out
    }

    /// Midpoint of the middle finger's middle (proximal) phalanx.
    pub fn middle_phalanx_center(&self) -> Vec2 {
        self.phalanx_segments[MIDDLE_FINGER][0].midpoint()
    }
}

/// Centre and amplitude of the randomized arm joints: `R_i = S_i + w_i·A_i`, `w_i ∈ [−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotPoseSpec {
    pub center: [f64; ARM_JOINTS],
    pub amplitude: [f64; ARM_JOINTS],
}

impl Default for RobotPoseSpec {
    fn default() -> Self {
        Self {
            center: [0.0, -PI / 2.0, PI / 4.0],
            amplitude: [PI / 2.0, PI / 12.0, PI / 12.0],
        }
    }
}

impl RobotPoseSpec {
    /// Arm pose for explicit weights.
    pub fn pose_for_weights(
        &self,
        weights: [f64; ARM_JOINTS],
        hand: &HandModel,
        hand_joints: [f64; HAND_JOINTS],
    ) -> Result<JointVector, SimError> {
        let mut arm = [0.0; ARM_JOINTS];
        for i in 0..ARM_JOINTS {
            arm[i] = self.center[i] + weights[i] * self.amplitude[i];
            let [lo, hi] = hand.joint_limits[i];
            if arm[i] < lo || arm[i] > hi {
                return Err(SimError::JointLimit { joint: i, value: arm[i] });
            }
        }
        Ok(JointVector::new(arm, hand_joints))
    }

    pub fn static_pose(
        &self,
        hand: &HandModel,
        hand_joints: [f64; HAND_JOINTS],
    ) -> Result<JointVector, SimError> {
        self.pose_for_weights([0.0; ARM_JOINTS], hand, hand_joints)
    }
}

/// Draws `w_i ~ U[−1, 1]` independently per randomized joint.
pub fn sample_robot_pose<R: Rng + ?Sized>(
    spec: &RobotPoseSpec,
    hand: &HandModel,
    hand_joints: [f64; HAND_JOINTS],
    rng: &mut R,
) -> Result<JointVector, SimError> {
    let mut w = [0.0; ARM_JOINTS];
    for wi in w.iter_mut() {
        *wi = rng.random_range(-1.0..=1.0);
    }
    spec.pose_for_weights(w, hand, hand_joints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_arm() -> HandModel {
        HandModel { arm_link_lengths: [1.0, 1.0, 1.0], ..HandModel::default() }
    }

    #[test]
    fn zero_configuration_palm() {
        let fk = unit_arm().forward_kinematics(&JointVector::zeros());
        assert!((fk.palm_center - Vec2::new(3.0, 0.0)).norm() < 1e-15);
        assert!((fk.palm_normal - Vec2::new(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn base_rotation_quarter_turn() {
        let mut j = JointVector::zeros();
        j.angles[0] = PI / 2.0;
        let fk = unit_arm().forward_kinematics(&j);
        assert!((fk.palm_center - Vec2::new(0.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn robot_pose_weights() {
        let spec = RobotPoseSpec::default();
        let hand = HandModel::default();
        let r0 = spec.pose_for_weights([0.0; 3], &hand, [0.0; 6]).unwrap();
        assert_eq!(r0.arm(), spec.center);
        let r1 = spec.pose_for_weights([1.0; 3], &hand, [0.0; 6]).unwrap();
        let expect = [PI / 2.0, -5.0 * PI / 12.0, PI / 3.0];
        for i in 0..3 {
            assert!((r1.angles[i] - expect[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn robot_pose_outside_limits_fails() {
        let spec = RobotPoseSpec { center: [3.0, 0.0, 0.0], amplitude: [0.5, 0.1, 0.1] };
        let err = spec.pose_for_weights([1.0, 0.0, 0.0], &HandModel::default(), [0.0; 6]);
        assert!(matches!(err, Err(SimError::JointLimit { joint: 0, .. })));
    }

    #[test]
    fn robot_pose_coverage() {
        let spec = RobotPoseSpec::default();
        let hand = HandModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for _ in 0..10_000 {
            let r = sample_robot_pose(&spec, &hand, [0.0; 6], &mut rng).unwrap();
            for i in 0..3 {
                lo[i] = lo[i].min(r.angles[i]);
                hi[i] = hi[i].max(r.angles[i]);
            }
        }
        for i in 0..3 {
            let (a, b) = (spec.center[i] - spec.amplitude[i], spec.center[i] + spec.amplitude[i]);
            assert!(lo[i] >= a && hi[i] <= b);
            assert!((hi[i] - lo[i]) >= 0.99 * (b - a));
        }
    }

    #[test]
    fn default_model_valid() {
        HandModel::default().validate().unwrap();
        let mut bad = HandModel::default();
        bad.phalanx_radius = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = HandModel::default();
        bad.joint_limits[4] = [1.0, 1.0];
        assert!(bad.validate().is_err());
    }
}
