//! Analytic gradients against central finite differences.

mod common;

use common::fd::{
    check, meta_fd_error, off_kink, primitives, random, rel_err, second_order, task, theta, H,
};
use metawsd::meta::MetaMethod;
use metawsd::tensor::{grad, Matrix, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_primitive_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, op, shapes) in primitives() {
            let inputs: Vec<Matrix> =
                shapes.iter().map(|&(r, c)| off_kink(random(r, c, &mut rng))).collect();
            let err = check(op, &inputs, &mut rng);
            prop_assert!(err < 1e-6, "{} rel err {:e}", name, err);
        }
    }

    #[test]
    fn composite_network_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = [random(5, 3, &mut rng), random(3, 4, &mut rng), random(1, 4, &mut rng)];
        let err = check(
            |x| {
                let h = x[0].matmul(&x[1])?.add(&x[2])?.tanh()?;
                let protos = Tensor::concat_rows(&[
                    h.select_rows(&[0, 1])?.mean_rows()?,
                    h.select_rows(&[2, 3])?.mean_rows()?,
                ])?;
                h.sq_euclidean(&protos)?.neg()?.cross_entropy(&[0, 0, 1, 1, 0])
            },
            &inputs,
            &mut rng,
        );
        prop_assert!(err < 1e-6, "rel err {:e}", err);
    }

    #[test]
    fn grad_of_grad_matches_finite_differences_of_grad(seed in any::<u64>()) {
        // f(x) = sum(tanh(x W)²), check d/dx of <∇_x f, v>.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = random(2, 3, &mut rng);
        let w = Tensor::constant(random(3, 3, &mut rng));
        let v = Tensor::constant(random(2, 3, &mut rng));
        let directional = |x: &Tensor, create: bool| -> Tensor {
            let h = x.matmul(&w).unwrap().tanh().unwrap();
            let f = h.mul(&h).unwrap().sum().unwrap();
            let g = grad(&f, &[x], create).unwrap().remove(0);
            g.mul(&v).unwrap().sum().unwrap()
        };
        let tape = Tape::new();
        let x = tape.leaf(x0.clone()).unwrap();
        let analytic = grad(&directional(&x, true), &[&x], false).unwrap().remove(0);
        let mut fd = Vec::new();
        for i in 0..x0.len() {
            let at = |delta: f64| {
                let mut m = x0.clone();
                m.data_mut()[i] += delta;
                let t = Tape::new();
                directional(&t.leaf(m).unwrap(), false).item().unwrap()
            };
            fd.push((at(H) - at(-H)) / (2.0 * H));
        }
        let err = rel_err(analytic.value().data(), &fd);
        prop_assert!(err < 1e-6, "rel err {:e}", err);
    }
}

#[test]
fn maml_two_parameter_model_one_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = task(&mut rng, 1, 2, 3);
    let th = theta(1, 1, &mut rng);
    let err = meta_fd_error(MetaMethod::Maml, &th, &t, &second_order(1, 0.3));
    assert!(err < 1e-4, "rel err {err:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn maml_meta_gradient_matches_finite_differences(seed in any::<u64>(), steps in 1usize..4) {
        // θ has 2×2 + 2 = 6 entries.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = task(&mut rng, 2, 2, 3);
        let th = theta(2, 2, &mut rng);
        let err = meta_fd_error(MetaMethod::Maml, &th, &t, &second_order(steps, 0.2));
        prop_assert!(err < 1e-4, "rel err {:e}", err);
    }

    #[test]
    fn protomaml_meta_gradient_matches_finite_differences(seed in any::<u64>(), steps in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = task(&mut rng, 2, 3, 2);
        let th = theta(2, 2, &mut rng);
        let err = meta_fd_error(MetaMethod::ProtoMaml, &th, &t, &second_order(steps, 0.2));
        prop_assert!(err < 1e-4, "rel err {:e}", err);
    }

    #[test]
    fn protonet_meta_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = task(&mut rng, 3, 3, 2);
        let th = theta(3, 2, &mut rng);
        let err = meta_fd_error(MetaMethod::ProtoNet, &th, &t, &second_order(0, 0.0));
        prop_assert!(err < 1e-6, "rel err {:e}", err);
    }
}
