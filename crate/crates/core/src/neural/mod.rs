//! Minimal differentiable numeric core: 64-bit dense tensors, an eager
//! reverse-mode graph, dense/attention layers, decoupled-weight-decay Adam,
//! a cosine learning-rate schedule, and finite-difference verification.

mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{finite_diff_against, finite_diff_check, FdReport};
pub use graph::{Gradients, Graph, Var};
pub use layers::{
    attention_register, cross_attention, max_pool_rows, mlp_apply, mlp_register, softmax,
};
pub use optim::{adamw_step, cosine_lr, AdamState, LrSchedule};
pub use params::{load_checkpoint, save_checkpoint, CheckpointData, ParamStore, CKPT_VERSION};
pub use tensor::Tensor;
