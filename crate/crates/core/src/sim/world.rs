//! Quasi-static penalty-contact integrator and the drop test.

use super::contact::{contacts, Contact, PolygonView};
use super::hand::{Capsule, HandModel, JointVector};
use super::shape::ObjectShape;
use super::SimError;
use crate::geom::{polygon_signed_area, Pose2, Vec2};
use serde::{Deserialize, Serialize};

pub const REWARD_SUCCESS: f64 = 0.0;
pub const REWARD_FAILURE: f64 = -1.0;

/// Simulator constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimParams {
    pub dt: f64,
    pub gravity: f64,
    /// Penalty stiffness k_n (N/m).
    pub contact_stiffness: f64,
    /// Normal damping on approach velocity (N·s/m).
    pub contact_damping: f64,
    pub friction: f64,
    pub linear_damping: f64,
    pub angular_damping: f64,
    /// Penetration tolerance ε_c for collision queries.
    pub contact_tolerance: f64,
    pub object_mass: f64,
    pub friction_iterations: usize,
    /// Object speed (m/s) treated as a blown-up integration.
    pub max_speed: f64,
    pub drop_duration: f64,
    /// Allowed vertical deviation d.
    pub drop_threshold: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 1.0 / 240.0,
            gravity: 9.81,
            contact_stiffness: 5000.0,
            contact_damping: 40.0,
            friction: 0.8,
            linear_damping: 2.0,
            angular_damping: 0.5,
            contact_tolerance: 1e-4,
            object_mass: 0.3,
            friction_iterations: 4,
            max_speed: 50.0,
            drop_duration: 1.0,
            drop_threshold: 0.025,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("dt", self.dt),
            ("contact_stiffness", self.contact_stiffness),
            ("object_mass", self.object_mass),
            ("max_speed", self.max_speed),
            ("drop_duration", self.drop_duration),
            ("drop_threshold", self.drop_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("gravity", self.gravity),
            ("contact_damping", self.contact_damping),
            ("friction", self.friction),
            ("linear_damping", self.linear_damping),
            ("angular_damping", self.angular_damping),
            ("contact_tolerance", self.contact_tolerance),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::InvalidParams(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.dt > 0.05 {
            return Err(SimError::InvalidParams(format!("dt {} too large", self.dt)));
        }
        Ok(())
    }

    pub fn gravity_vector(&self, tilt: f64) -> Vec2 {
        Vec2::new(self.gravity * tilt.sin(), -self.gravity * tilt.cos())
    }
}

/// Full simulator state. The hand is kinematic; only the object integrates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub joints: JointVector,
    pub object_pose: Pose2,
    /// (vx, vy, ω)
    pub object_velocity: [f64; 3],
    pub gravity: Vec2,
    pub time: f64,
}

impl WorldState {
    pub fn at_rest(joints: JointVector, object_pose: Pose2) -> Self {
        Self { joints, object_pose, object_velocity: [0.0; 3], gravity: Vec2::ZERO, time: 0.0 }
    }

    pub fn kinetic_energy(&self, mass: f64, inertia: f64) -> f64 {
        let [vx, vy, w] = self.object_velocity;
        0.5 * mass * (vx * vx + vy * vy) + 0.5 * inertia * w * w
    }
}

/// Mass properties and body-frame outline of the dynamic object.
#[derive(Debug, Clone)]
pub struct RigidBody {
    pub local_vertices: Vec<Vec2>,
    pub orientation: f64,
    pub mass: f64,
    pub inertia: f64,
    pub bound_radius: f64,
}

impl RigidBody {
    pub fn new(local_vertices: Vec<Vec2>, mass: f64) -> Self {
        let area = polygon_signed_area(&local_vertices);
        let inertia = mass * crate::geom::polygon_second_moment(&local_vertices) / area.abs();
        let bound_radius = local_vertices.iter().map(|v| v.norm()).fold(0.0, f64::max);
        Self { local_vertices, orientation: area.signum(), mass, inertia, bound_radius }
    }

    pub fn from_shape(shape: &ObjectShape, mass: f64) -> Self {
        Self::new(shape.vertices.clone(), mass)
    }

    pub fn world_vertices(&self, pose: &Pose2) -> Vec<Vec2> {
        self.local_vertices.iter().map(|v| pose.transform_point(*v)).collect()
    }

    pub fn contacts(&self, pose: &Pose2, capsules: &[Capsule]) -> Vec<Contact> {
        let verts = self.world_vertices(pose);
        let view = PolygonView {
            vertices: &verts,
            orientation: self.orientation,
            centroid: pose.translation(),
            bound_radius: self.bound_radius,
        };
        contacts(capsules, &view)
    }
}

/// One semi-implicit Euler step of the object against static capsules.
pub fn step_body(
    state: &WorldState,
    body: &RigidBody,
    capsules: &[Capsule],
    params: &SimParams,
) -> Result<WorldState, SimError> {
    let dt = params.dt;
    let pose = state.object_pose;
    let centroid = pose.translation();
    let mut v = Vec2::new(state.object_velocity[0], state.object_velocity[1]);
    let mut w = state.object_velocity[2];
    let cs = body.contacts(&pose, capsules);

    let inv_m = 1.0 / body.mass;
    let inv_i = 1.0 / body.inertia;
    let mut force = state.gravity * body.mass;
    let mut torque = 0.0;
    let mut normal_forces = Vec::with_capacity(cs.len());
    for c in &cs {
        let r = c.point - centroid;
        let vp = v + r.perp() * w;
        let fn_mag = (params.contact_stiffness * c.depth - params.contact_damping * vp.dot(c.normal)).max(0.0);
        let f = c.normal * fn_mag;
        force += f;
        torque += r.cross(f);
        normal_forces.push(fn_mag);
    }
    v += force * (dt * inv_m);
    w += torque * dt * inv_i;

    // Coulomb friction as clamped tangential impulses.
    let mut accumulated = vec![0.0; cs.len()];
    for _ in 0..params.friction_iterations {
        for (k, c) in cs.iter().enumerate() {
            let r = c.point - centroid;
            let t = c.normal.perp();
            let rt = r.cross(t);
            let eff = inv_m + rt * rt * inv_i;
            let vt = (v + r.perp() * w).dot(t);
            let limit = params.friction * normal_forces[k] * dt;
            let old = accumulated[k];
            let new = (old - vt / eff).clamp(-limit, limit);
            let delta = new - old;
            accumulated[k] = new;
            v += t * (delta * inv_m);
            w += rt * delta * inv_i;
        }
    }

    v = v * (1.0 / (1.0 + dt * params.linear_damping));
    w /= 1.0 + dt * params.angular_damping;

    let speed = v.norm();
    if !(speed <= params.max_speed) || !w.is_finite() {
        return Err(SimError::Diverged { speed, time: state.time });
    }
    let next_pose = Pose2::new(pose.x + dt * v.x, pose.y + dt * v.y, pose.theta + dt * w);
    Ok(WorldState {
        joints: state.joints,
        object_pose: next_pose,
        object_velocity: [v.x, v.y, w],
        gravity: state.gravity,
        time: state.time + dt,
    })
}

/// Hand, object and constants bundled for stepping.
#[derive(Debug, Clone)]
pub struct GraspWorld {
    pub hand: HandModel,
    pub shape: ObjectShape,
    pub params: SimParams,
    pub body: RigidBody,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropOutcome {
    pub reward: f64,
    pub deviation: f64,
    pub final_state: WorldState,
}

impl GraspWorld {
    pub fn new(hand: HandModel, shape: ObjectShape, params: SimParams) -> Self {
        let body = RigidBody::from_shape(&shape, params.object_mass);
        Self { hand, shape, params, body }
    }

    pub fn capsules(&self, joints: &JointVector) -> Vec<Capsule> {
        self.hand.capsules(joints)
    }

    pub fn step(&self, state: &WorldState) -> Result<WorldState, SimError> {
        step_body(state, &self.body, &self.capsules(&state.joints), &self.params)
    }

    pub fn contacts(&self, state: &WorldState) -> Vec<Contact> {
        self.body.contacts(&state.object_pose, &self.capsules(&state.joints))
    }

    pub fn collides(&self, joints: &JointVector, object_pose: &Pose2) -> bool {
        collide(&self.hand, joints, object_pose, &self.shape, self.params.contact_tolerance)
    }

    /// Enables gravity tilted by `tilt` from vertical and integrates for the
    /// configured duration; success iff the vertical drift from `reference_y`
    /// stays within the threshold.
    pub fn drop_test_from(
        &self,
        state: &WorldState,
        tilt: f64,
        reference_y: f64,
    ) -> Result<DropOutcome, SimError> {
        let capsules = self.capsules(&state.joints);
        let mut s = *state;
        s.gravity = self.params.gravity_vector(tilt);
        let steps = (self.params.drop_duration / self.params.dt).round() as usize;
        // An object this far below its start has left the hand for good.
        let lost = 10.0 * self.params.drop_threshold;
        for _ in 0..steps {
            s = step_body(&s, &self.body, &capsules, &self.params)?;
            if (s.object_pose.y - reference_y).abs() > lost {
                break;
            }
        }
        let deviation = (s.object_pose.y - reference_y).abs();
        Ok(DropOutcome { reward: drop_reward(deviation, self.params.drop_threshold), deviation, final_state: s })
    }

    pub fn drop_test(&self, state: &WorldState, tilt: f64) -> Result<DropOutcome, SimError> {
        self.drop_test_from(state, tilt, state.object_pose.y)
    }
}

/// Sparse reward: failure only when the deviation is strictly greater than `threshold`.
pub fn drop_reward(deviation: f64, threshold: f64) -> f64 {
    if deviation > threshold {
        REWARD_FAILURE
    } else {
        REWARD_SUCCESS
    }
}

pub fn step_contacts(
    state: &WorldState,
    hand: &HandModel,
    shape: &ObjectShape,
    params: &SimParams,
) -> Result<WorldState, SimError> {
    let body = RigidBody::from_shape(shape, params.object_mass);
    step_body(state, &body, &hand.capsules(&state.joints), params)
}

pub fn drop_test(
    state: &WorldState,
    hand: &HandModel,
    shape: &ObjectShape,
    params: &SimParams,
    tilt: f64,
) -> Result<f64, SimError> {
    let world = GraspWorld::new(hand.clone(), shape.clone(), params.clone());
    Ok(world.drop_test(state, tilt)?.reward)
}

/// World pose of an object given its pose relative to the hand base.
pub fn place_object_relative(hand_base: &Pose2, rel_pose: &Pose2) -> Pose2 {
    hand_base.compose(rel_pose)
}

/// Whether any phalanx or the palm penetrates the object by more than `tolerance`.
pub fn collide(
    hand: &HandModel,
    joints: &JointVector,
    object_pose: &Pose2,
    shape: &ObjectShape,
    tolerance: f64,
) -> bool {
    let verts = shape.world_vertices(object_pose);
    let view = PolygonView {
        vertices: &verts,
        orientation: 1.0,
        centroid: object_pose.translation(),
        bound_radius: shape.circumradius(),
    };
    super::contact::any_penetration(&hand.capsules(joints), &view, tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Segment;
    use crate::sim::hand::HandPart;
    use crate::sim::shape::ObjectId;

    fn free_state() -> WorldState {
        WorldState {
            joints: JointVector::zeros(),
            object_pose: Pose2::new(10.0, 10.0, 0.0),
            object_velocity: [0.0; 3],
            gravity: Vec2::new(0.0, -9.81),
            time: 0.0,
        }
    }

    #[test]
    fn ballistic_step() {
        let params = SimParams { linear_damping: 0.0, ..SimParams::default() };
        let body = RigidBody::from_shape(&ObjectShape::builtin(ObjectId::Bottle), 0.3);
        let next = step_body(&free_state(), &body, &[], &params).unwrap();
        assert!((next.object_velocity[1] + 9.81 / 240.0).abs() < 1e-15);
        assert_eq!(next.object_velocity[0], 0.0);
    }

    #[test]
    fn reward_boundary_is_success() {
        assert_eq!(drop_reward(0.025, 0.025), REWARD_SUCCESS);
        assert_eq!(drop_reward(0.025 + 1e-12, 0.025), REWARD_FAILURE);
        assert_eq!(drop_reward(0.0, 0.025), REWARD_SUCCESS);
    }

    #[test]
    fn unsupported_object_falls() {
        let world = GraspWorld::new(
            HandModel::default(),
            ObjectShape::builtin(ObjectId::Camera),
            SimParams::default(),
        );
        let out = world.drop_test(&free_state(), 0.0).unwrap();
        assert_eq!(out.reward, REWARD_FAILURE);
        assert!(out.deviation > 0.1);
    }

    #[test]
    fn resting_on_wide_palm() {
        let params = SimParams::default();
        let shape = ObjectShape::builtin(ObjectId::Camera);
        let body = RigidBody::from_shape(&shape, params.object_mass);
        let (lo, _) = shape.extent_along(Vec2::new(0.0, 1.0));
        let palm = Capsule {
            segment: Segment::new(Vec2::new(-1.0, 0.0), Vec2::new(1.0, 0.0)),
            radius: 0.008,
            part: HandPart::Palm,
        };
        let mut s = WorldState::at_rest(JointVector::zeros(), Pose2::new(0.0, 0.008 - lo, 0.0));
        s.gravity = params.gravity_vector(0.0);
        let y0 = s.object_pose.y;
        for _ in 0..240 {
            s = step_body(&s, &body, &[palm], &params).unwrap();
        }
        assert!((s.object_pose.y - y0).abs() < 0.005);
    }

    #[test]
    fn divergence_is_reported() {
        let params = SimParams { max_speed: 0.01, ..SimParams::default() };
        let body = RigidBody::from_shape(&ObjectShape::builtin(ObjectId::Camera), 0.3);
        let mut s = free_state();
        let mut err = None;
        for _ in 0..100 {
            match step_body(&s, &body, &[], &params) {
                Ok(n) => s = n,
                Err(e) => {
                    err = Some(e);
                    break;
                }
            }
        }
        assert!(matches!(err, Some(SimError::Diverged { .. })));
    }

    #[test]
    fn place_relative_cases() {
        let rel = Pose2::new(0.3, -0.2, 0.7);
        assert_eq!(place_object_relative(&Pose2::IDENTITY, &rel), rel);
        let w = place_object_relative(&Pose2::new(1.0, 0.0, 0.0), &Pose2::new(0.0, 2.0, 0.0));
        assert_eq!(w, Pose2::new(1.0, 2.0, 0.0));
    }
}
