//! The trainable smoothing head: a bandwidth network, a mixing-weight MLP,
//! exact gradients for both, Adam, and checkpoints.

mod adam;
pub mod checkpoint;
mod params;
mod step;

pub use adam::{AdamConfig, AdamState, DEFAULT_LR};
pub use params::{AdapterGrad, AdapterParams, Layout, Learnable, SATURATED_LOGIT};
pub use step::{
    backward_step, bandwidth_forward, forward_step, loss_and_grad, mixing_forward, step_loss, NeighborSet, StepTape,
    PROB_FLOOR,
};
