mod common;

use common::{blobs, episodes, mean, tasks};
use metawsd::meta::{
    batch_meta_gradient, init_theta, initial_head, inner_adapt, meta_test, meta_train,
    meta_train_with, predict_task, protomaml_init_head, protonet_predict, prototype_matrix,
    sgd_inner_loop, task_meta_gradient, task_rng, InnerLoop, MetaConfig, MetaMethod, Method,
    TaskData,
};
use metawsd::nn::{forward_shared, init_head, Activation, Adam, SharedBlock};
use metawsd::tensor::{grad, Matrix, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg(method: MetaMethod) -> MetaConfig {
    MetaConfig {
        hidden_dim: 16,
        ..MetaConfig::preset(Method::Meta(method), 8)
    }
}

fn inner(cfg: &MetaConfig, steps: usize) -> InnerLoop {
    InnerLoop {
        learner_lr: cfg.learner_lr,
        output_lr: cfg.output_lr,
        steps,
        create_graph: cfg.create_graph,
        adapt_top_only: cfg.adapt_top_only,
    }
}

fn first_task(sep: f64, sigma: f64) -> TaskData {
    let corpus = blobs(sep, sigma, 1);
    let set = episodes(&corpus, 4, 1);
    TaskData::from_episode(&corpus, &set.train[0])
}

fn theta(dim: usize, seed: u64) -> SharedBlock {
    SharedBlock::init(
        dim,
        16,
        Activation::Tanh,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn max_diff(a: &[Matrix], b: &[Matrix]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.max_abs_diff(y))
        .fold(0.0, f64::max)
}

#[test]
fn zero_inner_steps_return_parameters_unchanged() {
    let t = first_task(3.0, 1.0);
    let th = theta(16, 0);
    let head = init_head(16, t.n_classes, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let cfg = small_cfg(MetaMethod::Fomaml);
    let xs = Tensor::constant(t.support_x.clone());
    let a = inner_adapt(
        &th.frozen(),
        &head.frozen(),
        &xs,
        &t.support_y,
        &inner(&cfg, 0),
    )
    .unwrap();
    assert_eq!(a.shared.to_block(), th);
    assert_eq!(a.head.to_head(), head);
    assert!(a.support_losses.is_empty());
}

#[test]
fn zero_rates_leave_parameters_and_losses_fixed() {
    let t = first_task(3.0, 1.0);
    let th = theta(16, 0);
    let head = init_head(16, t.n_classes, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let xs = Tensor::constant(t.support_x.clone());
    for create_graph in [false, true] {
        let il = InnerLoop {
            learner_lr: 0.0,
            output_lr: 0.0,
            steps: 5,
            create_graph,
            adapt_top_only: false,
        };
        let a = inner_adapt(&th.frozen(), &head.frozen(), &xs, &t.support_y, &il).unwrap();
        assert_eq!(a.shared.to_block(), th);
        assert_eq!(a.head.to_head(), head);
        assert_eq!(a.support_losses.len(), 5);
        assert!(a.support_losses.iter().all(|&l| l == a.support_losses[0]));
    }
}

#[test]
fn quadratic_surrogate_one_step() {
    for create_graph in [false, true] {
        let tape = Tape::new();
        let p = tape.leaf(Matrix::scalar(0.0)).unwrap();
        let three = Tensor::scalar(3.0);
        let (out, losses) = sgd_inner_loop(vec![p], &[0.1], 1, create_graph, |ps| {
            let d = ps[0].sub(&three)?;
            d.mul(&d)
        })
        .unwrap();
        assert!((out[0].item().unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(losses, vec![9.0]);
    }
}

#[test]
fn zero_step_outer_gradient_is_plain_query_gradient() {
    let t = first_task(3.0, 1.0);
    let th = theta(16, 0);
    let cfg = small_cfg(MetaMethod::Fomaml);
    let (loss, g) =
        batch_meta_gradient(MetaMethod::Fomaml, &th, &[&t], &inner(&cfg, 0), 9).unwrap();

    let head = init_head(16, t.n_classes, &mut task_rng(9, t.id)).unwrap();
    let tape = Tape::new();
    let shared = th.bind(&tape).unwrap();
    let q = forward_shared(&shared, &Tensor::constant(t.query_x.clone())).unwrap();
    let plain = head
        .frozen()
        .logits(&q)
        .unwrap()
        .cross_entropy(&t.query_y)
        .unwrap();
    let expect = grad(&plain, &shared.tensors(), false).unwrap();
    assert!((loss - plain.item().unwrap()).abs() < 1e-12);
    let expect: Vec<Matrix> = expect.iter().map(Tensor::to_matrix).collect();
    assert!(max_diff(&g, &expect) < 1e-12);
}

#[test]
fn duplicated_task_doubles_the_gradient() {
    let t = first_task(3.0, 1.0);
    let th = theta(16, 0);
    for m in MetaMethod::ALL {
        let cfg = small_cfg(m);
        let il = inner(&cfg, 2);
        let (l1, g1) = batch_meta_gradient(m, &th, &[&t], &il, 4).unwrap();
        let (l2, g2) = batch_meta_gradient(m, &th, &[&t, &t], &il, 4).unwrap();
        assert_eq!(l2, 2.0 * l1);
        let doubled: Vec<Matrix> = g1.iter().map(|g| g.scale(2.0)).collect();
        assert_eq!(g2, doubled, "{m:?}");
    }
}

#[test]
fn zero_meta_rate_leaves_theta_at_its_initialization() {
    let corpus = blobs(3.0, 1.0, 2);
    let set = episodes(&corpus, 20, 2);
    let train = tasks(&corpus, &set.train);
    for m in MetaMethod::ALL {
        let cfg = MetaConfig {
            meta_lr: 0.0,
            max_epochs: 2,
            inner_steps: 1,
            ..small_cfg(m)
        };
        let out = meta_train_with(&cfg, 16, &train, 5, |_, _| Ok(0.5)).unwrap();
        assert_eq!(out.theta, init_theta(&cfg, 16, 5).unwrap(), "{m:?}");
    }
}

#[test]
fn zero_rates_make_maml_and_fomaml_gradients_agree() {
    let corpus = blobs(3.0, 1.0, 3);
    let set = episodes(&corpus, 10, 3);
    let th = theta(16, 1);
    for t in tasks(&corpus, &set.train) {
        let mut il = InnerLoop {
            learner_lr: 0.0,
            output_lr: 0.0,
            steps: 5,
            create_graph: true,
            adapt_top_only: false,
        };
        let (lm, gm) = task_meta_gradient(MetaMethod::Maml, &th, &t, &il, 8).unwrap();
        il.create_graph = false;
        let (lf, gf) = task_meta_gradient(MetaMethod::Fomaml, &th, &t, &il, 8).unwrap();
        assert!((lm - lf).abs() <= 1e-12);
        assert!(max_diff(&gm, &gf) <= 1e-12);
    }
}

#[test]
fn linear_inner_loss_makes_second_order_term_vanish() {
    // inner loss c·p, outer loss (p' − 3)²
    let c = Tensor::scalar(1.7);
    let outer = |p: &Tensor| {
        let d = p.sub(&Tensor::scalar(3.0)).unwrap();
        d.mul(&d).unwrap()
    };
    let tape = Tape::new();
    let p = tape.leaf(Matrix::scalar(0.4)).unwrap();
    let (adapted, _) =
        sgd_inner_loop(vec![p.clone()], &[0.2], 1, true, |ps| ps[0].mul(&c)).unwrap();
    let maml = grad(&outer(&adapted[0]), &[&p], false).unwrap()[0]
        .item()
        .unwrap();

    let (adapted, _) = sgd_inner_loop(vec![p], &[0.2], 1, false, |ps| ps[0].mul(&c)).unwrap();
    let tape = Tape::new();
    let rebound = tape.leaf(adapted[0].to_matrix()).unwrap();
    let fomaml = grad(&outer(&rebound), &[&rebound], false).unwrap()[0]
        .item()
        .unwrap();
    assert!((maml - fomaml).abs() < 1e-15);

    // A curved inner loss does bring in the second-order term.
    let tape = Tape::new();
    let p = tape.leaf(Matrix::scalar(0.4)).unwrap();
    let (adapted, _) =
        sgd_inner_loop(vec![p.clone()], &[0.2], 1, true, |ps| ps[0].mul(&ps[0])).unwrap();
    let curved = grad(&outer(&adapted[0]), &[&p], false).unwrap()[0]
        .item()
        .unwrap();
    assert!((curved - 2.0 * (0.24 - 3.0) * 0.6).abs() < 1e-12);
}

#[test]
fn zero_test_steps_predict_with_the_initial_head() {
    let corpus = blobs(3.0, 1.0, 4);
    let set = episodes(&corpus, 4, 4);
    let th = theta(16, 3);
    for t in tasks(&corpus, &set.test) {
        for m in [
            MetaMethod::Fomaml,
            MetaMethod::Maml,
            MetaMethod::ProtoFomaml,
            MetaMethod::ProtoMaml,
        ] {
            let cfg = small_cfg(m);
            let il = InnerLoop {
                create_graph: false,
                ..inner(&cfg, 0)
            };
            let got = predict_task(m, &th, &t, &il, 6).unwrap();
            let head = initial_head(m, &th, &t, &mut task_rng(6, t.id)).unwrap();
            let h = forward_shared(&th.frozen(), &Tensor::constant(t.query_x.clone())).unwrap();
            let expect = head.frozen().logits(&h).unwrap().value().argmax_rows();
            assert_eq!(got, expect, "{m:?}");
            if m.proto_init() {
                let pn = predict_task(MetaMethod::ProtoNet, &th, &t, &il, 6).unwrap();
                assert_eq!(got, pn);
            }
        }
    }
}

#[test]
fn prototype_head_matches_protonet_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let dim = rng.random_range(2..6);
        let n_classes = rng.random_range(2..5);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for c in 0..n_classes {
            for _ in 0..rng.random_range(1..4) {
                xs.push((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect());
                ys.push(c);
            }
        }
        let queries: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let th = SharedBlock::init(dim, 8, Activation::Tanh, &mut rng).unwrap();
        let shared = th.frozen();
        let s =
            forward_shared(&shared, &Tensor::constant(Matrix::from_rows(&xs).unwrap())).unwrap();
        let q = forward_shared(
            &shared,
            &Tensor::constant(Matrix::from_rows(&queries).unwrap()),
        )
        .unwrap();
        let protos = prototype_matrix(&s, &ys).unwrap();
        let p_net = protonet_predict(&protos, &q).unwrap().value().map(f64::exp);
        let head = protomaml_init_head(&protos).unwrap();
        let p_head = head
            .logits(&q)
            .unwrap()
            .log_softmax()
            .unwrap()
            .value()
            .map(f64::exp);
        assert!(p_net.max_abs_diff(&p_head) <= 1e-9);
    }
}

#[test]
fn separated_episode_has_vanishing_protonet_gradient() {
    let t = first_task(200.0, 0.01);
    let th = SharedBlock {
        weight: Matrix::identity(16),
        bias: Matrix::zeros(1, 16),
        activation: Activation::Relu,
    };
    let il = inner(&small_cfg(MetaMethod::ProtoNet), 0);
    let (loss, g) = task_meta_gradient(MetaMethod::ProtoNet, &th, &t, &il, 0).unwrap();
    let norm = g.iter().map(|m| m.norm().powi(2)).sum::<f64>().sqrt();
    assert!(loss < 1e-3, "loss {loss}");
    assert!(norm < 1e-3, "gradient norm {norm}");
}

#[test]
fn repeated_outer_steps_lower_the_episode_loss() {
    let t = first_task(3.0, 1.0);
    for m in [
        MetaMethod::ProtoNet,
        MetaMethod::Fomaml,
        MetaMethod::ProtoFomaml,
    ] {
        let cfg = MetaConfig {
            meta_lr: 1e-2,
            ..small_cfg(m)
        };
        let mut th = init_theta(&cfg, 16, 0).unwrap();
        let mut adam = Adam::new(cfg.meta_lr).unwrap();
        let mut losses = Vec::new();
        for _ in 0..50 {
            let (l, g) =
                batch_meta_gradient(m, &th, &[&t], &inner(&cfg, cfg.inner_steps), 1).unwrap();
            losses.push(l);
            adam.step(&mut th.matrices_mut(), &g).unwrap();
        }
        let head = mean(&losses[..10]);
        let tail = mean(&losses[40..]);
        assert!(tail < head, "{m:?}: {head} -> {tail}");
    }
}

#[test]
fn patience_one_with_constant_validation_stops_after_epoch_two() {
    let corpus = blobs(3.0, 1.0, 5);
    let set = episodes(&corpus, 8, 5);
    let cfg = MetaConfig {
        patience: 1,
        max_epochs: 10,
        ..small_cfg(MetaMethod::ProtoNet)
    };
    let out = meta_train_with(&cfg, 16, &tasks(&corpus, &set.train), 0, |_, _| Ok(0.4)).unwrap();
    assert_eq!(out.log.len(), 2);
    assert_eq!(out.best_epoch, Some(1));
}

#[test]
fn returned_theta_is_from_the_best_validation_epoch() {
    let corpus = blobs(3.0, 1.0, 6);
    let set = episodes(&corpus, 8, 6);
    let cfg = MetaConfig {
        patience: 2,
        max_epochs: 10,
        ..small_cfg(MetaMethod::ProtoNet)
    };
    let scores = [0.1, 0.5, 0.2, 0.5, 0.3];
    let mut seen = Vec::new();
    let out = meta_train_with(&cfg, 16, &tasks(&corpus, &set.train), 0, |th, epoch| {
        seen.push(th.clone());
        Ok(scores[epoch - 1])
    })
    .unwrap();
    assert_eq!(out.log.len(), 4);
    assert_eq!(out.best_epoch, Some(2));
    assert_eq!(out.theta, seen[1]);
    assert_ne!(out.theta, seen[3]);
}

#[test]
fn protonet_learns_well_separated_blobs() {
    let corpus = blobs(5.0, 0.5, 7);
    let set = episodes(&corpus, 500, 7);
    let cfg = MetaConfig {
        max_epochs: 10,
        hidden_dim: 64,
        ..MetaConfig::preset(Method::Meta(MetaMethod::ProtoNet), 8)
    };
    let val = tasks(&corpus, &set.val);
    let out = meta_train(&cfg, 16, &tasks(&corpus, &set.train), &val, 0).unwrap();
    let best = out.best_val.unwrap();
    assert!(best >= 0.9, "validation macro F1 {best}");
}

#[test]
fn protonet_is_perfect_when_queries_sit_on_prototypes() {
    let corpus = blobs(3.0, 0.0, 8);
    let set = episodes(&corpus, 1, 8);
    let cfg = small_cfg(MetaMethod::ProtoNet);
    let th = init_theta(&cfg, 16, 0).unwrap();
    let scores = meta_test(
        Method::Meta(MetaMethod::ProtoNet),
        Some(&th),
        &tasks(&corpus, &set.test),
        &cfg,
        0,
    )
    .unwrap();
    assert!(scores.iter().all(|&s| s == 1.0), "{scores:?}");
}

#[test]
fn episodic_fine_tuning_is_the_method_on_untrained_theta() {
    let corpus = blobs(3.0, 1.0, 9);
    let set = episodes(&corpus, 1, 9);
    let test = tasks(&corpus, &set.test);
    for m in MetaMethod::ALL {
        let cfg = MetaConfig {
            inner_steps: 2,
            ..small_cfg(m)
        };
        let th = init_theta(&cfg, 16, 3).unwrap();
        let ef = meta_test(Method::EpisodicFineTune(m), None, &test, &cfg, 3).unwrap();
        let direct = meta_test(Method::Meta(m), Some(&th), &test, &cfg, 3).unwrap();
        assert_eq!(ef, direct, "{m:?}");
    }
}

#[test]
fn permuting_labels_permutes_protonet_predictions() {
    let corpus = blobs(3.0, 1.0, 10);
    let set = episodes(&corpus, 1, 10);
    let th = theta(16, 4);
    let il = inner(&small_cfg(MetaMethod::ProtoNet), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for t in tasks(&corpus, &set.test) {
        let mut perm: Vec<usize> = (0..t.n_classes).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let relabeled = TaskData {
            support_y: t.support_y.iter().map(|&y| perm[y]).collect(),
            query_y: t.query_y.iter().map(|&y| perm[y]).collect(),
            ..t.clone()
        };
        let a = predict_task(MetaMethod::ProtoNet, &th, &t, &il, 0).unwrap();
        let b = predict_task(MetaMethod::ProtoNet, &th, &relabeled, &il, 0).unwrap();
        assert_eq!(a.iter().map(|&y| perm[y]).collect::<Vec<_>>(), b);
    }
}
