//! Majority sense, nearest neighbor, the non-episodic baseline and
//! episodic fine-tuning from scratch.

mod ne;
mod simple;

pub use ne::{
    episode_head, masked_log_softmax, masked_softmax, ne_batch_gradient, ne_evaluate,
    ne_finetune_and_predict, ne_train, ne_train_with, ne_training_items, GlobalHead, NeModel,
    NeOutcome,
};
pub use simple::{majority_sense_predict, nearest_neighbor_predict};

use crate::error::Result;
use crate::meta::{meta_predict, MetaConfig, MetaMethod, Method, TaskData};

/// A meta-learner's test procedure run from freshly initialized parameters.
pub fn ef_predict(
    method: MetaMethod,
    tasks: &[TaskData],
    cfg: &MetaConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    meta_predict(Method::EpisodicFineTune(method), None, tasks, cfg, seed)
}
