use crate::error::{Error, Result};
use crate::nn::HeadParams;
use crate::tensor::Tensor;

/// One class prototype: the mean support representation of a class.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    pub label: usize,
    pub mean: Vec<f64>,
    pub count: usize,
}

/// Class means of `representations` (one row per support item), stacked as a
/// `C × hidden` tensor in label order. Differentiable.
pub fn prototype_matrix(representations: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, _) = representations.shape();
    if labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{n} representations but {} labels",
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rows = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "class {c} has no support items"
            )));
        }
        let k = idx.len() as f64;
        rows.push(
            representations
                .select_rows(&idx)?
                .sum_rows()?
                .scale(1.0 / k)?,
        );
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty support set".into()));
    }
    Tensor::concat_rows(&rows)
}

pub fn compute_prototypes(representations: &Tensor, labels: &[usize]) -> Result<Vec<Prototype>> {
    let means = prototype_matrix(representations, labels)?;
    Ok((0..means.shape().0)
        .map(|c| Prototype {
            label: c,
            mean: means.value().row(c).to_vec(),
            count: labels.iter().filter(|&&l| l == c).count(),
        })
        .collect())
}

/// Negative squared distances from each query row to each prototype.
pub fn protonet_logits(prototypes: &Tensor, queries: &Tensor) -> Result<Tensor> {
    if prototypes.shape().0 < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 prototypes, got {}",
            prototypes.shape().0
        )));
    }
    queries.sq_euclidean(prototypes)?.neg()
}

/// Per-query log-probabilities under the softmax over negative distances.
pub fn protonet_predict(prototypes: &Tensor, queries: &Tensor) -> Result<Tensor> {
    protonet_logits(prototypes, queries)?.log_softmax()
}

/// Linear head equivalent to the prototype classifier: `w_c = 2 mu_c`,
/// `b_c = -|mu_c|^2`. Stays on the graph of `prototypes`.
pub fn protomaml_init_head(prototypes: &Tensor) -> Result<HeadParams> {
    Ok(HeadParams {
        weight: prototypes.transpose()?.scale(2.0)?,
        bias: prototypes.mul(prototypes)?.sum_cols()?.transpose()?.neg()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::constant(Matrix::from_rows(rows).unwrap())
    }

    #[test]
    fn single_item_prototype_is_the_item() {
        let p = compute_prototypes(&t(&[vec![1.0, 2.0], vec![3.0, 4.0]]), &[1, 0]).unwrap();
        assert_eq!(p[0].mean, vec![3.0, 4.0]);
        assert_eq!(p[1].mean, vec![1.0, 2.0]);
        assert_eq!(p[1].count, 1);
    }

    #[test]
    fn prototype_is_mean() {
        let p = compute_prototypes(
            &t(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]]),
            &[0, 0, 1],
        )
        .unwrap();
        assert_eq!(p[0].mean, vec![0.5, 0.5]);
        assert_eq!(p[0].count, 2);
    }

    #[test]
    fn permuted_support_same_prototypes() {
        let a = compute_prototypes(
            &t(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]]),
            &[0, 0, 1],
        )
        .unwrap();
        let b = compute_prototypes(
            &t(&[vec![5.0, 5.0], vec![0.0, 1.0], vec![1.0, 0.0]]),
            &[1, 0, 0],
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_class_is_an_error() {
        assert!(prototype_matrix(&t(&[vec![1.0], vec![2.0]]), &[0, 2]).is_err());
    }

    #[test]
    fn equidistant_query_is_uniform() {
        let lp =
            protonet_predict(&t(&[vec![0.0, 0.0], vec![2.0, 0.0]]), &t(&[vec![1.0, 3.0]])).unwrap();
        let p: Vec<f64> = lp.value().data().iter().map(|x| x.exp()).collect();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn near_prototype_probability() {
        let lp =
            protonet_predict(&t(&[vec![0.0, 0.0], vec![2.0, 0.0]]), &t(&[vec![0.0, 0.0]])).unwrap();
        // softmax(0, -4)
        let expected = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((lp.value().get(0, 0).exp() - expected).abs() < 1e-12);
        assert!((expected - 0.9820).abs() < 1e-4);
    }

    #[test]
    fn identical_prototypes_uniform_thirds() {
        let lp = protonet_predict(&t(&vec![vec![1.0, 1.0]; 3]), &t(&[vec![-2.0, 0.5]])).unwrap();
        for &x in lp.value().data() {
            assert!((x.exp() - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn head_from_prototype_formula() {
        let head = protomaml_init_head(&t(&[vec![1.0, 2.0], vec![0.0, 0.0]])).unwrap();
        assert_eq!(head.weight.value().data(), &[2.0, 0.0, 4.0, 0.0]);
        assert_eq!(head.bias.value().data(), &[-5.0, 0.0]);
    }
}
