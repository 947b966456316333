//! Planar grasping world: hand kinematics, object shapes, contacts and the drop test.

pub mod closure;
pub mod contact;
pub mod grasp;
pub mod hand;
pub mod shape;
pub mod world;

pub use closure::check_force_closure;
pub use contact::Contact;
pub use grasp::{clamp_toward, clamped_waypoints, GraspEnv, GraspOutcome, GraspProtocol, Placement};
pub use hand::{
    sample_robot_pose, Capsule, HandKinematics, HandModel, HandPart, JointVector, RobotPoseSpec,
    ARM_JOINTS, HAND_JOINTS, MIDDLE_FINGER, NUM_FINGERS, NUM_JOINTS,
};
pub use shape::{ObjectId, ObjectShape};
pub use world::{REWARD_FAILURE, REWARD_SUCCESS, 
    collide, drop_reward, drop_test, place_object_relative, step_contacts, DropOutcome,
    GraspWorld, RigidBody, SimParams, WorldState,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid hand model: {0}")]
    InvalidModel(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("unknown object id `{0}`")]
    UnknownObject(String),
    #[error("joint {joint} value {value} outside its limits")]
    JointLimit { joint: usize, value: f64 },
    #[error("invalid simulator parameters: {0}")]
    InvalidParams(String),
    #[error("integration diverged: object speed {speed} at t = {time}")]
    Diverged { speed: f64, time: f64 },
}
