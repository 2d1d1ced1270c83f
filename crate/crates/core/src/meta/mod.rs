//! Prototypical networks, (FO)MAML and Proto(FO)MAML.

mod adapt;
mod config;
mod proto;
mod train;

pub use adapt::{
    adapt_and_predict_with_head, adapted_query_loss, batch_meta_gradient, initial_head,
    inner_adapt, predict_task, sgd_inner_loop, task_meta_gradient, task_rng, Adapted, InnerLoop,
    TaskData,
};
pub use config::{MetaConfig, MetaMethod, Method};
pub use proto::{
    compute_prototypes, protomaml_init_head, protonet_logits, protonet_predict, prototype_matrix,
    Prototype,
};
pub use train::{
    init_theta, meta_predict, meta_test, meta_train, meta_train_with, test_inner, train_inner,
    write_log, LogEntry, TrainOutcome,
};
