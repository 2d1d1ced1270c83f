//! Few-shot episodic meta-learning for word sense disambiguation over
//! pre-computed token embeddings.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod meta;
pub mod nn;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
