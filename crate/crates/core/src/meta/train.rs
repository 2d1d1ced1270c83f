use std::io::Write;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adapt::{batch_meta_gradient, predict_task, InnerLoop, TaskData};
use super::config::{MetaConfig, MetaMethod, Method};
use crate::error::{Error, Result};
use crate::eval::macro_f1;
use crate::nn::{Adam, SharedBlock, StepDecay};

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub theta: SharedBlock,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
    pub log: Vec<LogEntry>,
}

pub fn write_log(log: &[LogEntry], mut out: impl Write) -> Result<()> {
    for entry in log {
        serde_json::to_writer(&mut out, entry)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Freshly initialized shared block for `seed`.
pub fn init_theta(cfg: &MetaConfig, input_dim: usize, seed: u64) -> Result<SharedBlock> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    SharedBlock::init(input_dim, cfg.hidden_dim, cfg.activation, &mut rng)
}

pub fn train_inner(cfg: &MetaConfig) -> InnerLoop {
    InnerLoop {
        learner_lr: cfg.learner_lr,
        output_lr: cfg.output_lr,
        steps: cfg.inner_steps,
        create_graph: cfg.create_graph,
        adapt_top_only: cfg.adapt_top_only,
    }
}

pub fn test_inner(cfg: &MetaConfig) -> InnerLoop {
    InnerLoop {
        steps: cfg.eval_inner_steps(),
        create_graph: false,
        ..train_inner(cfg)
    }
}

fn meta_method_of(cfg: &MetaConfig) -> Result<MetaMethod> {
    match cfg.method {
        Method::Meta(m) => Ok(m),
        other => Err(Error::Config(format!("{other} is not meta-trained"))),
    }
}

/// Meta-trains from a fresh initialization.
///
/// Each epoch visits every training task once in a seeded random order, one
/// outer Adam step per batch of summed task gradients. After each epoch
/// `validate` scores the current parameters; the best-scoring parameters are
/// kept (earliest epoch on ties) and training stops once `patience` epochs
/// pass without a strict improvement.
pub fn meta_train_with(
    cfg: &MetaConfig,
    input_dim: usize,
    tasks: &[TaskData],
    seed: u64,
    mut validate: impl FnMut(&SharedBlock, usize) -> Result<f64>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let method = meta_method_of(cfg)?;
    let mut theta = init_theta(cfg, input_dim, seed)?;
    let mut adam = Adam::new(cfg.meta_lr)?;
    if cfg.lr_decay {
        adam = adam.with_schedule(StepDecay::default());
    }
    let inner = train_inner(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let mut outcome = TrainOutcome {
        theta: theta.clone(),
        best_epoch: None,
        best_val: None,
        log: Vec::new(),
    };
    if tasks.is_empty() {
        return Ok(outcome);
    }
    let mut stale = 0;
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TaskData> = chunk.iter().map(|&i| &tasks[i]).collect();
            let head_seed = rng.next_u64();
            let (loss, grads) = batch_meta_gradient(method, &theta, &batch, &inner, head_seed)?;
            loss_sum += loss;
            adam.step(&mut theta.matrices_mut(), &grads)?;
        }
        let val = validate(&theta, epoch)?;
        outcome.log.push(LogEntry {
            epoch,
            train_loss: loss_sum / tasks.len() as f64,
            val_macro_f1: val,
            lr: adam.current_lr(),
        });
        if outcome.best_val.is_none_or(|b| val > b) {
            outcome.best_val = Some(val);
            outcome.best_epoch = Some(epoch);
            outcome.theta = theta.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(outcome)
}

/// Meta-trains with early stopping on the mean macro F1 of `val`.
pub fn meta_train(
    cfg: &MetaConfig,
    input_dim: usize,
    train: &[TaskData],
    val: &[TaskData],
    seed: u64,
) -> Result<TrainOutcome> {
    meta_train_with(cfg, input_dim, train, seed, |theta, _| {
        let scores = meta_test(cfg.method, Some(theta), val, cfg, seed)?;
        Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
    })
}

/// Query predictions for every task under a meta-learner or its EF variant.
pub fn meta_predict(
    method: Method,
    theta: Option<&SharedBlock>,
    tasks: &[TaskData],
    cfg: &MetaConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let Some(first) = tasks.first() else {
        return Ok(Vec::new());
    };
    let fresh;
    let (m, theta) = match method {
        Method::Meta(m) => (
            m,
            theta.ok_or_else(|| Error::Config(format!("{method} needs trained parameters")))?,
        ),
        Method::EpisodicFineTune(m) => {
            fresh = init_theta(cfg, first.support_x.cols(), seed)?;
            (m, &fresh)
        }
        other => {
            return Err(Error::Config(format!("{other} is not a meta-learner")));
        }
    };
    let inner = test_inner(cfg);
    tasks
        .iter()
        .map(|t| predict_task(m, theta, t, &inner, seed))
        .collect()
}

/// Per-task macro F1 of a meta-learner or its EF variant.
pub fn meta_test(
    method: Method,
    theta: Option<&SharedBlock>,
    tasks: &[TaskData],
    cfg: &MetaConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let preds = meta_predict(method, theta, tasks, cfg, seed)?;
    tasks
        .iter()
        .zip(&preds)
        .map(|(t, p)| macro_f1(&t.query_y, p, &(0..t.n_classes).collect::<Vec<_>>()))
        .collect()
}
