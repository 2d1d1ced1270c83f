//! Model pieces and optimizers.

mod layers;
mod optim;

pub use layers::{
    forward_shared, init_head, Activation, HeadParams, SharedBlock, SharedParams, TaskHead,
};
pub use optim::{sgd_step, Adam, StepDecay};
