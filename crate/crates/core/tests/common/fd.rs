//! Finite-difference oracles shared by the gradient checks.

use metawsd::meta::{adapted_query_loss, task_meta_gradient, InnerLoop, MetaMethod, TaskData};
use metawsd::nn::{Activation, SharedBlock};
use metawsd::tensor::{grad, Matrix, Tape, Tensor};
use metawsd::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Keeps entries away from the relu kink.
pub fn off_kink(m: Matrix) -> Matrix {
    m.map(|x| {
        if x.abs() < 0.05 {
            x + 0.1f64.copysign(x)
        } else {
            x
        }
    })
}

pub type Op = fn(&[Tensor]) -> Result<Tensor>;

/// Checks d/dx_k of sum(op(xs) ⊙ r) for every input k.
pub fn check(op: Op, inputs: &[Matrix], rng: &mut ChaCha8Rng) -> f64 {
    let tape = Tape::new();
    let xs: Vec<Tensor> = inputs
        .iter()
        .map(|m| tape.leaf(m.clone()).unwrap())
        .collect();
    let out = op(&xs).unwrap();
    let (r, c) = out.shape();
    let weights = Tensor::constant(random(r, c, rng));
    let scalar = |o: &Tensor| o.mul(&weights).unwrap().sum().unwrap();
    let loss = scalar(&out);
    let refs: Vec<&Tensor> = xs.iter().collect();
    let analytic = grad(&loss, &refs, false).unwrap();

    let eval = |ms: &[Matrix]| {
        let ts: Vec<Tensor> = ms.iter().map(|m| Tensor::constant(m.clone())).collect();
        scalar(&op(&ts).unwrap()).item().unwrap()
    };
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let mut fd = Vec::with_capacity(inputs[k].len());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            fd.push((eval(&plus) - eval(&minus)) / (2.0 * H));
        }
        worst = worst.max(rel_err(analytic[k].value().data(), &fd));
    }
    worst
}

pub type Primitive = (&'static str, Op, Vec<(usize, usize)>);

pub fn primitives() -> Vec<Primitive> {
    vec![
        ("matmul", |x| x[0].matmul(&x[1]), vec![(3, 4), (4, 2)]),
        ("transpose", |x| x[0].transpose(), vec![(3, 2)]),
        ("add", |x| x[0].add(&x[1]), vec![(3, 2), (3, 2)]),
        (
            "add_broadcast_row",
            |x| x[0].add(&x[1]),
            vec![(3, 2), (1, 2)],
        ),
        (
            "sub_broadcast_col",
            |x| x[0].sub(&x[1]),
            vec![(3, 2), (3, 1)],
        ),
        ("mul", |x| x[0].mul(&x[1]), vec![(2, 3), (2, 3)]),
        ("scale", |x| x[0].scale(-1.7), vec![(2, 3)]),
        ("neg", |x| x[0].neg(), vec![(2, 2)]),
        ("sum_rows", |x| x[0].sum_rows(), vec![(4, 3)]),
        ("sum_cols", |x| x[0].sum_cols(), vec![(4, 3)]),
        ("sum", |x| x[0].sum(), vec![(2, 5)]),
        ("mean_rows", |x| x[0].mean_rows(), vec![(4, 3)]),
        ("expand", |x| x[0].expand((3, 4)), vec![(1, 4)]),
        ("tanh", |x| x[0].tanh(), vec![(3, 3)]),
        ("relu", |x| x[0].relu(), vec![(3, 3)]),
        ("exp", |x| x[0].exp(), vec![(2, 3)]),
        ("log_softmax", |x| x[0].log_softmax(), vec![(3, 4)]),
        (
            "nll_loss",
            |x| x[0].log_softmax()?.nll_loss(&[2, 0, 1]),
            vec![(3, 4)],
        ),
        (
            "cross_entropy",
            |x| x[0].cross_entropy(&[1, 1, 3]),
            vec![(3, 4)],
        ),
        (
            "concat_rows",
            |x| Tensor::concat_rows(&[x[0].clone(), x[1].clone()]),
            vec![(2, 3), (1, 3)],
        ),
        (
            "select_rows",
            |x| x[0].select_rows(&[2, 0, 2]),
            vec![(3, 2)],
        ),
        ("select_cols", |x| x[0].select_cols(&[1, 3]), vec![(2, 4)]),
        (
            "sq_euclidean",
            |x| x[0].sq_euclidean(&x[1]),
            vec![(3, 4), (2, 4)],
        ),
    ]
}

pub fn task(rng: &mut ChaCha8Rng, dim: usize, n_classes: usize, per_class: usize) -> TaskData {
    let mut rows = |n: usize| {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for c in 0..n_classes {
            for _ in 0..n {
                xs.push(
                    (0..dim)
                        .map(|d| {
                            rng.random_range(-1.0..1.0) + if d % n_classes == c { 1.0 } else { 0.0 }
                        })
                        .collect(),
                );
                ys.push(c);
            }
        }
        (Matrix::from_rows(&xs).unwrap(), ys)
    };
    let (support_x, support_y) = rows(per_class);
    let (query_x, query_y) = rows(per_class);
    TaskData {
        id: 7,
        n_classes,
        support_x,
        support_y,
        query_x,
        query_y,
    }
}

pub fn theta(input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> SharedBlock {
    SharedBlock {
        weight: random(input, hidden, rng),
        bias: random(1, hidden, rng),
        activation: Activation::Tanh,
    }
}

/// Meta-gradient against central differences of the post-adaptation query
/// loss, over every entry of θ.
pub fn meta_fd_error(
    method: MetaMethod,
    theta: &SharedBlock,
    task: &TaskData,
    inner: &InnerLoop,
) -> f64 {
    let (_, g) = task_meta_gradient(method, theta, task, inner, 11).unwrap();
    let mut analytic = Vec::new();
    let mut fd = Vec::new();
    for (k, gk) in g.iter().enumerate().take(2) {
        analytic.extend_from_slice(gk.data());
        for i in 0..theta.matrices()[k].len() {
            let at = |delta: f64| {
                let mut t = theta.clone();
                t.matrices_mut()[k].data_mut()[i] += delta;
                adapted_query_loss(method, &t, task, inner, 11).unwrap()
            };
            fd.push((at(H) - at(-H)) / (2.0 * H));
        }
    }
    rel_err(&analytic, &fd)
}

pub fn second_order(steps: usize, lr: f64) -> InnerLoop {
    InnerLoop {
        learner_lr: lr,
        output_lr: lr,
        steps,
        create_graph: true,
        adapt_top_only: false,
    }
}
