//! Grasp dataset enhancement, pose sampling and diffusion-policy training on a planar grasping simulator.

pub mod geom;
pub mod sim;
pub mod dataset;
pub mod nn;
pub mod rl;
pub mod seeding;
pub mod diffusion;
pub mod sampler;
pub mod pipeline;
