//! Dense tensors, reverse-mode differentiation, the layers both networks
//! need, and Adam.

pub mod graph;
pub mod mlp;
pub mod params;
pub mod tensor;
pub mod unet;

pub use graph::{Gradients, Graph, NodeId};
pub use mlp::{forward_mlp, mlp_apply, Head, MlpSpec};
pub use params::{AdamParams, Grads, ParamStore};
pub use tensor::Tensor;
pub use unet::{forward_unet, unet_apply, UNetSpec};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}
