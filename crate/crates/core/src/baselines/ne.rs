//! Non-episodic baseline: one classifier over every meta-training sense,
//! trained on mini-batches with a softmax restricted to the classes present
//! in each batch, then fine-tuned per episode at test time.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, Episode, Instance};
use crate::error::{Error, Result};
use crate::eval::macro_f1;
use crate::meta::{
    adapt_and_predict_with_head, init_theta, task_rng, test_inner, LogEntry, MetaConfig, TaskData,
};
use crate::nn::{forward_shared, Adam, SharedBlock, StepDecay, TaskHead};
use crate::tensor::{grad, Matrix, Tape, Tensor};

/// Output layer over a fixed sense inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalHead {
    /// `hidden_dim × senses.len()`, column `i` scores `senses[i]`.
    pub head: TaskHead,
    /// Sorted, so the sense-to-column map is injective.
    pub senses: Vec<String>,
}

impl GlobalHead {
    pub fn new(head: TaskHead, senses: Vec<String>) -> Result<Self> {
        if head.n_classes() != senses.len() {
            return Err(Error::InvalidArgument(format!(
                "{} head columns for {} senses",
                head.n_classes(),
                senses.len()
            )));
        }
        if senses.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "global senses must be sorted and distinct".into(),
            ));
        }
        Ok(Self { head, senses })
    }

    pub fn index_of(&self, sense: &str) -> Option<usize> {
        self.senses.binary_search_by(|s| s.as_str().cmp(sense)).ok()
    }
}

/// Trained non-episodic model.
#[derive(Debug, Clone, PartialEq)]
pub struct NeModel {
    pub theta: SharedBlock,
    pub global: GlobalHead,
}

/// Log-softmax over the columns in `classes` only, as an
/// `n × classes.len()` tensor. Other columns receive no probability mass.
pub fn masked_log_softmax(logits: &Tensor, classes: &[usize]) -> Result<Tensor> {
    logits.select_cols(classes)?.log_softmax()
}

/// Full-width probabilities under the restricted softmax; columns outside
/// `classes` are exactly 0.
pub fn masked_softmax(logits: &Matrix, classes: &[usize]) -> Result<Matrix> {
    let lp = masked_log_softmax(&Tensor::constant(logits.clone()), classes)?;
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        for (k, &c) in classes.iter().enumerate() {
            out.set(r, c, lp.value().get(r, k).exp());
        }
    }
    Ok(out)
}

/// Training items: every distinct target occurrence in the given episodes,
/// support and query merged, with its global sense index.
pub fn ne_training_items(episodes: &[Episode]) -> (Vec<String>, Vec<(Instance, usize)>) {
    let mut items: BTreeMap<Instance, &str> = BTreeMap::new();
    for ep in episodes {
        for it in ep.support.iter().chain(&ep.query) {
            items.insert(it.instance, &ep.senses[it.label]);
        }
    }
    let senses: Vec<String> = items
        .values()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(String::from)
        .collect();
    let labelled = items
        .into_iter()
        .map(|(inst, s)| {
            let idx = senses
                .binary_search_by(|x| x.as_str().cmp(s))
                .expect("collected");
            (inst, idx)
        })
        .collect();
    (senses, labelled)
}

/// Masked cross-entropy of one mini-batch and the gradients of
/// `[theta.weight, theta.bias, head.weight, head.bias]`.
pub fn ne_batch_gradient(
    theta: &SharedBlock,
    head: &TaskHead,
    x: &Matrix,
    global_labels: &[usize],
) -> Result<(f64, Vec<Matrix>)> {
    let classes: Vec<usize> = global_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let local: Vec<usize> = global_labels
        .iter()
        .map(|g| classes.binary_search(g).expect("present"))
        .collect();
    let tape = Tape::new();
    let shared = theta.bind(&tape)?;
    let h = head.bind(&tape)?;
    let logits = h.logits(&forward_shared(&shared, &Tensor::constant(x.clone()))?)?;
    let loss = masked_log_softmax(&logits, &classes)?.nll_loss(&local)?;
    let [sw, sb] = shared.tensors();
    let [hw, hb] = h.tensors();
    let grads = grad(&loss, &[sw, sb, hw, hb], false)?;
    Ok((loss.item()?, grads.iter().map(Tensor::to_matrix).collect()))
}

fn fresh_column(hidden: usize, rng: &mut impl Rng) -> Vec<f64> {
    let bound = 1.0 / (hidden as f64).sqrt();
    (0..hidden)
        .map(|_| rng.random_range(-bound..=bound))
        .collect()
}

/// Task head for an episode cut from the global head. Senses never seen in
/// training get fresh random columns. Unless `mask` is set, the remaining
/// global columns are appended after the episode's own.
pub fn episode_head(
    global: &GlobalHead,
    episode: &Episode,
    mask: bool,
    rng: &mut impl Rng,
) -> Result<TaskHead> {
    let hidden = global.head.weight.rows();
    let mut cols: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut used = BTreeSet::new();
    for sense in &episode.senses {
        match global.index_of(sense) {
            Some(i) => {
                used.insert(i);
                let w: Vec<f64> = (0..hidden).map(|r| global.head.weight.get(r, i)).collect();
                cols.push((w, global.head.bias.get(0, i)));
            }
            None => cols.push((fresh_column(hidden, rng), 0.0)),
        }
    }
    if !mask {
        for i in (0..global.senses.len()).filter(|i| !used.contains(i)) {
            let w: Vec<f64> = (0..hidden).map(|r| global.head.weight.get(r, i)).collect();
            cols.push((w, global.head.bias.get(0, i)));
        }
    }
    let n = cols.len();
    let mut weight = Matrix::zeros(hidden, n);
    let mut bias = Matrix::zeros(1, n);
    for (c, (w, b)) in cols.iter().enumerate() {
        for (r, &x) in w.iter().enumerate() {
            weight.set(r, c, x);
        }
        bias.set(0, c, *b);
    }
    Ok(TaskHead { weight, bias })
}

/// Fine-tunes on the episode's support set and labels its query set. Without
/// masking, a prediction outside the episode's senses is reported as label
/// `n_classes`.
pub fn ne_finetune_and_predict(
    model: &NeModel,
    episode: &Episode,
    task: &TaskData,
    cfg: &MetaConfig,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = task_rng(seed, episode.id);
    let head = episode_head(&model.global, episode, cfg.ne_mask_test, &mut rng)?;
    let preds = adapt_and_predict_with_head(&model.theta, &head, task, &test_inner(cfg))?;
    let c = episode.n_classes();
    Ok(preds.into_iter().map(|p| p.min(c)).collect())
}

/// Macro F1 of the fine-tuned model on each of `episodes`.
pub fn ne_evaluate(
    model: &NeModel,
    episodes: &[Episode],
    tasks: &[TaskData],
    cfg: &MetaConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    episodes
        .iter()
        .zip(tasks)
        .map(|(ep, task)| {
            let pred = ne_finetune_and_predict(model, ep, task, cfg, seed)?;
            macro_f1(
                &task.query_y,
                &pred,
                &(0..ep.n_classes()).collect::<Vec<_>>(),
            )
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct NeOutcome {
    pub model: NeModel,
    pub best_epoch: Option<usize>,
    pub log: Vec<LogEntry>,
}

/// Trains the non-episodic model with Adam at the learner rate, early
/// stopping on `validate`.
pub fn ne_train_with(
    cfg: &MetaConfig,
    corpus: &Corpus,
    train: &[Episode],
    seed: u64,
    mut validate: impl FnMut(&NeModel, usize) -> Result<f64>,
) -> Result<NeOutcome> {
    cfg.validate()?;
    let (senses, items) = ne_training_items(train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let theta = init_theta(cfg, corpus.embedding_dim(), seed)?;
    let bound = 1.0 / (cfg.hidden_dim as f64).sqrt();
    let weight = Matrix::new(
        cfg.hidden_dim,
        senses.len(),
        (0..cfg.hidden_dim * senses.len())
            .map(|_| rng.random_range(-bound..=bound))
            .collect(),
    )?;
    let head = TaskHead {
        weight,
        bias: Matrix::zeros(1, senses.len()),
    };
    let mut model = NeModel {
        theta,
        global: GlobalHead::new(head, senses)?,
    };
    let mut outcome = NeOutcome {
        model: model.clone(),
        best_epoch: None,
        log: Vec::new(),
    };
    if items.is_empty() {
        return Ok(outcome);
    }
    let mut adam = Adam::new(cfg.learner_lr)?;
    if cfg.lr_decay {
        adam = adam.with_schedule(StepDecay::default());
    }
    let mut best = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.ne_batch_size) {
            let x = corpus.gather(chunk.iter().map(|&i| items[i].0));
            let y: Vec<usize> = chunk.iter().map(|&i| items[i].1).collect();
            let (loss, grads) = ne_batch_gradient(&model.theta, &model.global.head, &x, &y)?;
            loss_sum += loss * chunk.len() as f64;
            let [sw, sb] = model.theta.matrices_mut();
            let TaskHead { weight, bias } = &mut model.global.head;
            adam.step(&mut [sw, sb, weight, bias], &grads)?;
        }
        let val = validate(&model, epoch)?;
        outcome.log.push(LogEntry {
            epoch,
            train_loss: loss_sum / items.len() as f64,
            val_macro_f1: val,
            lr: adam.current_lr(),
        });
        if best.is_none_or(|b| val > b) {
            best = Some(val);
            outcome.best_epoch = Some(epoch);
            outcome.model = model.clone();
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

/// Trains with early stopping on the fine-tuned macro F1 of `val`.
pub fn ne_train(
    cfg: &MetaConfig,
    corpus: &Corpus,
    train: &[Episode],
    val: &[Episode],
    seed: u64,
) -> Result<NeOutcome> {
    let tasks: Vec<TaskData> = val
        .iter()
        .map(|e| TaskData::from_episode(corpus, e))
        .collect();
    ne_train_with(cfg, corpus, train, seed, |model, _| {
        let s = ne_evaluate(model, val, &tasks, cfg, seed)?;
        Ok(s.iter().sum::<f64>() / s.len().max(1) as f64)
    })
}
