//! Dense 2-D tensors with reverse-mode automatic differentiation, including
//! gradients of gradients.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{grad, NodeId, Tape, Tensor};
