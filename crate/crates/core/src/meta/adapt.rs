//! Inner-loop adaptation, per-task meta-gradients and episode prediction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::MetaMethod;
use super::proto::{protomaml_init_head, protonet_logits, prototype_matrix};
use crate::data::{Corpus, Episode};
use crate::error::{Error, Result};
use crate::nn::{forward_shared, init_head, HeadParams, SharedBlock, SharedParams, TaskHead};
use crate::tensor::{grad, Matrix, Tape, Tensor};

/// An episode resolved to embedding matrices and local labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub id: usize,
    pub n_classes: usize,
    pub support_x: Matrix,
    pub support_y: Vec<usize>,
    pub query_x: Matrix,
    pub query_y: Vec<usize>,
}

impl TaskData {
    pub fn from_episode(corpus: &Corpus, episode: &Episode) -> Self {
        Self {
            id: episode.id,
            n_classes: episode.n_classes(),
            support_x: corpus.gather(episode.support_instances()),
            support_y: episode.support_labels(),
            query_x: corpus.gather(episode.query_instances()),
            query_y: episode.query_labels(),
        }
    }
}

/// Inner-loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerLoop {
    pub learner_lr: f64,
    pub output_lr: f64,
    pub steps: usize,
    pub create_graph: bool,
    pub adapt_top_only: bool,
}

/// Random stream for the task head of task `task_id` under `seed`.
pub fn task_rng(seed: u64, task_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task_id as u64);
    rng
}

/// Runs `steps` plain gradient-descent updates on `params`, parameter `i`
/// moving with rate `lrs[i]`.
///
/// With `create_graph` the updates are recorded, so the results stay
/// differentiable with respect to whatever `params` depend on. Without it
/// every step rebinds the parameters as fresh leaves and the results are
/// constants. Returns the final parameters and the loss before each step.
pub fn sgd_inner_loop(
    params: Vec<Tensor>,
    lrs: &[f64],
    steps: usize,
    create_graph: bool,
    mut loss_fn: impl FnMut(&[Tensor]) -> Result<Tensor>,
) -> Result<(Vec<Tensor>, Vec<f64>)> {
    if lrs.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} learning rates",
            params.len(),
            lrs.len()
        )));
    }
    if let Some(lr) = lrs.iter().find(|lr| lr.is_nan() || **lr < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "negative learning rate {lr}"
        )));
    }
    let mut params = params;
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        if !create_graph {
            let tape = Tape::new();
            params = params
                .iter()
                .map(|p| tape.leaf(p.to_matrix()))
                .collect::<Result<_>>()?;
        }
        let loss = loss_fn(&params)?;
        losses.push(loss.item()?);
        let refs: Vec<&Tensor> = params.iter().collect();
        let grads = grad(&loss, &refs, create_graph)?;
        params = params
            .iter()
            .zip(&grads)
            .zip(lrs)
            .map(|((p, g), &lr)| {
                if create_graph {
                    p.sub(&g.scale(lr)?)
                } else {
                    Ok(Tensor::constant(p.value().axpy_neg(lr, g.value())?))
                }
            })
            .collect::<Result<_>>()?;
    }
    Ok((params, losses))
}

/// Adapted parameters and the support loss before each inner step.
#[derive(Debug, Clone)]
pub struct Adapted {
    pub shared: SharedParams,
    pub head: HeadParams,
    pub support_losses: Vec<f64>,
}

/// Fine-tunes the shared block with rate `learner_lr` and the head with
/// `output_lr` on the support cross-entropy.
pub fn inner_adapt(
    shared: &SharedParams,
    head: &HeadParams,
    support_x: &Tensor,
    support_y: &[usize],
    inner: &InnerLoop,
) -> Result<Adapted> {
    let loss = |s: &SharedParams, h: &HeadParams| {
        h.logits(&forward_shared(s, support_x)?)?
            .cross_entropy(support_y)
    };
    if inner.adapt_top_only {
        // First-order steps rebind the head on fresh tapes; the shared block
        // must not pin it to another one.
        let shared = &if inner.create_graph {
            shared.clone()
        } else {
            shared.replace(shared.tensors().map(Tensor::detach).into_iter())
        };
        let params = head.tensors().map(Tensor::clone).to_vec();
        let (out, losses) = sgd_inner_loop(
            params,
            &[inner.output_lr; 2],
            inner.steps,
            inner.create_graph,
            |p| loss(shared, &head.replace(p.iter().cloned())),
        )?;
        return Ok(Adapted {
            shared: shared.clone(),
            head: head.replace(out.into_iter()),
            support_losses: losses,
        });
    }
    let mut params: Vec<Tensor> = shared.tensors().map(Tensor::clone).to_vec();
    params.extend(head.tensors().map(Tensor::clone));
    let lrs = [
        inner.learner_lr,
        inner.learner_lr,
        inner.output_lr,
        inner.output_lr,
    ];
    let (out, losses) = sgd_inner_loop(params, &lrs, inner.steps, inner.create_graph, |p| {
        loss(
            &shared.replace(p[..2].iter().cloned()),
            &head.replace(p[2..].iter().cloned()),
        )
    })?;
    let mut it = out.into_iter();
    let shared = shared.replace(it.by_ref().take(2));
    Ok(Adapted {
        shared,
        head: head.replace(it),
        support_losses: losses,
    })
}

/// The task head a method starts from, computed with the current shared block
/// as constants.
pub fn initial_head(
    method: MetaMethod,
    theta: &SharedBlock,
    task: &TaskData,
    rng: &mut ChaCha8Rng,
) -> Result<TaskHead> {
    if method.proto_init() {
        let reps = forward_shared(&theta.frozen(), &Tensor::constant(task.support_x.clone()))?;
        let protos = prototype_matrix(&reps, &task.support_y)?;
        Ok(protomaml_init_head(&protos)?.to_head())
    } else {
        init_head(theta.hidden_dim(), task.n_classes, rng)
    }
}

/// Query cross-entropy of one task and its gradient with respect to the
/// shared block.
///
/// ProtoNet differentiates the prototype classifier directly. The other
/// methods adapt first; first-order runs take the gradient at the adapted
/// parameters, second-order runs differentiate through the inner loop and,
/// for prototype-initialized heads, through the head initialization.
pub fn task_meta_gradient(
    method: MetaMethod,
    theta: &SharedBlock,
    task: &TaskData,
    inner: &InnerLoop,
    head_seed: u64,
) -> Result<(f64, Vec<Matrix>)> {
    let xs = Tensor::constant(task.support_x.clone());
    let xq = Tensor::constant(task.query_x.clone());
    let tape = Tape::new();
    let shared = theta.bind(&tape)?;

    let loss = if method == MetaMethod::ProtoNet {
        let protos = prototype_matrix(&forward_shared(&shared, &xs)?, &task.support_y)?;
        protonet_logits(&protos, &forward_shared(&shared, &xq)?)?.cross_entropy(&task.query_y)?
    } else if inner.create_graph {
        let head = if method.proto_init() {
            let protos = prototype_matrix(&forward_shared(&shared, &xs)?, &task.support_y)?;
            protomaml_init_head(&protos)?
        } else {
            let mut rng = task_rng(head_seed, task.id);
            init_head(theta.hidden_dim(), task.n_classes, &mut rng)?.bind(&tape)?
        };
        let a = inner_adapt(&shared, &head, &xs, &task.support_y, inner)?;
        a.head
            .logits(&forward_shared(&a.shared, &xq)?)?
            .cross_entropy(&task.query_y)?
    } else {
        let mut rng = task_rng(head_seed, task.id);
        let head = initial_head(method, theta, task, &mut rng)?;
        let a = inner_adapt(&theta.frozen(), &head.frozen(), &xs, &task.support_y, inner)?;
        let tape = Tape::new();
        let shared = a.shared.to_block().bind(&tape)?;
        let head = a.head.to_head().bind(&tape)?;
        let loss = head
            .logits(&forward_shared(&shared, &xq)?)?
            .cross_entropy(&task.query_y)?;
        let g = grad(&loss, &shared.tensors(), false)?;
        return Ok((loss.item()?, g.iter().map(Tensor::to_matrix).collect()));
    };
    let g = grad(&loss, &shared.tensors(), false)?;
    Ok((loss.item()?, g.iter().map(Tensor::to_matrix).collect()))
}

/// Summed query losses and summed meta-gradients over a batch of tasks.
pub fn batch_meta_gradient(
    method: MetaMethod,
    theta: &SharedBlock,
    batch: &[&TaskData],
    inner: &InnerLoop,
    head_seed: u64,
) -> Result<(f64, Vec<Matrix>)> {
    let mut total = 0.0;
    let mut sum: Vec<Matrix> = theta
        .matrices()
        .iter()
        .map(|m| Matrix::zeros(m.rows(), m.cols()))
        .collect();
    for task in batch {
        let (loss, grads) = task_meta_gradient(method, theta, task, inner, head_seed)?;
        total += loss;
        for (s, g) in sum.iter_mut().zip(&grads) {
            *s = s.zip_broadcast(g, "add", |a, b| a + b)?;
        }
    }
    Ok((total, sum))
}

/// Query loss after adaptation as a plain function of the shared block; the
/// quantity whose gradient second-order methods compute.
pub fn adapted_query_loss(
    method: MetaMethod,
    theta: &SharedBlock,
    task: &TaskData,
    inner: &InnerLoop,
    head_seed: u64,
) -> Result<f64> {
    let xs = Tensor::constant(task.support_x.clone());
    let xq = Tensor::constant(task.query_x.clone());
    let shared = theta.frozen();
    if method == MetaMethod::ProtoNet {
        let protos = prototype_matrix(&forward_shared(&shared, &xs)?, &task.support_y)?;
        return protonet_logits(&protos, &forward_shared(&shared, &xq)?)?
            .cross_entropy(&task.query_y)?
            .item();
    }
    let mut rng = task_rng(head_seed, task.id);
    let head = initial_head(method, theta, task, &mut rng)?;
    let a = inner_adapt(
        &shared,
        &head.frozen(),
        &xs,
        &task.support_y,
        &InnerLoop {
            create_graph: false,
            ..*inner
        },
    )?;
    a.head
        .logits(&forward_shared(&a.shared, &xq)?)?
        .cross_entropy(&task.query_y)?
        .item()
}

/// Fine-tunes `head` and a copy of `theta` on the support set, then labels
/// the query set.
pub fn adapt_and_predict_with_head(
    theta: &SharedBlock,
    head: &TaskHead,
    task: &TaskData,
    inner: &InnerLoop,
) -> Result<Vec<usize>> {
    let inner = InnerLoop {
        create_graph: false,
        ..*inner
    };
    let xs = Tensor::constant(task.support_x.clone());
    let a = inner_adapt(
        &theta.frozen(),
        &head.frozen(),
        &xs,
        &task.support_y,
        &inner,
    )?;
    let logits = a.head.logits(&forward_shared(
        &a.shared,
        &Tensor::constant(task.query_x.clone()),
    )?)?;
    Ok(logits.value().argmax_rows())
}

/// Query predictions of `method` on one task. Query labels are never read.
pub fn predict_task(
    method: MetaMethod,
    theta: &SharedBlock,
    task: &TaskData,
    inner: &InnerLoop,
    head_seed: u64,
) -> Result<Vec<usize>> {
    if method == MetaMethod::ProtoNet {
        let shared = theta.frozen();
        let reps = forward_shared(&shared, &Tensor::constant(task.support_x.clone()))?;
        let protos = prototype_matrix(&reps, &task.support_y)?;
        let q = forward_shared(&shared, &Tensor::constant(task.query_x.clone()))?;
        return Ok(protonet_logits(&protos, &q)?.value().argmax_rows());
    }
    let mut rng = task_rng(head_seed, task.id);
    let head = initial_head(method, theta, task, &mut rng)?;
    adapt_and_predict_with_head(theta, &head, task, inner)
}
