//! Minimal neural kernel: dense tensors, a reverse-mode tape, linear and
//! attention layers, Adam, finite-difference gradient checking, and
//! checkpoint I/O. All arithmetic is 64-bit.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use gradcheck::grad_check;
pub use layers::{
    attention_forward, attention_graph, linear_graph, mlp_forward, mlp_graph,
    register_attention, register_linear, Activation, AttentionIds, AttentionParams, Linear,
    LinearIds, MlpParams, NetError,
};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor2;
