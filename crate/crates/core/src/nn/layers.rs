use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::new(rows, cols, data).expect("sized by construction")
}

/// The shared block: a linear layer from the embedding space to the hidden
/// space followed by an activation. Its parameters are meta-learned.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedBlock {
    /// `embedding_dim × hidden_dim`
    pub weight: Matrix,
    /// `1 × hidden_dim`
    pub bias: Matrix,
    pub activation: Activation,
}

impl SharedBlock {
    /// Fan-in uniform weights, zero bias.
    pub fn init(
        embedding_dim: usize,
        hidden_dim: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if embedding_dim == 0 || hidden_dim == 0 {
            return Err(Error::InvalidArgument(
                "shared block dimensions must be positive".into(),
            ));
        }
        let bound = 1.0 / (embedding_dim as f64).sqrt();
        Ok(Self {
            weight: uniform(embedding_dim, hidden_dim, bound, rng),
            bias: Matrix::zeros(1, hidden_dim),
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Parameters as tracked leaves on `tape`.
    pub fn bind(&self, tape: &Tape) -> Result<SharedParams> {
        Ok(SharedParams {
            weight: tape.leaf(self.weight.clone())?,
            bias: tape.leaf(self.bias.clone())?,
            activation: self.activation,
        })
    }

    /// Parameters as constants, for gradient-free inference.
    pub fn frozen(&self) -> SharedParams {
        SharedParams {
            weight: Tensor::constant(self.weight.clone()),
            bias: Tensor::constant(self.bias.clone()),
            activation: self.activation,
        }
    }

    pub fn matrices(&self) -> [&Matrix; 2] {
        [&self.weight, &self.bias]
    }

    pub fn matrices_mut(&mut self) -> [&mut Matrix; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Shared-block parameters as tensors, possibly mid-adaptation.
#[derive(Debug, Clone)]
pub struct SharedParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl SharedParams {
    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn replace(&self, mut tensors: impl Iterator<Item = Tensor>) -> Self {
        Self {
            weight: tensors.next().expect("weight"),
            bias: tensors.next().expect("bias"),
            activation: self.activation,
        }
    }

    pub fn to_block(&self) -> SharedBlock {
        SharedBlock {
            weight: self.weight.to_matrix(),
            bias: self.bias.to_matrix(),
            activation: self.activation,
        }
    }
}

/// Applies the shared block to `n × embedding_dim` inputs.
pub fn forward_shared(block: &SharedParams, embeddings: &Tensor) -> Result<Tensor> {
    let expected = block.weight.shape().0;
    if embeddings.shape().1 != expected {
        return Err(Error::ShapeMismatch {
            op: "forward_shared",
            lhs: embeddings.shape(),
            rhs: block.weight.shape(),
        });
    }
    let pre = embeddings.matmul(&block.weight)?.add(&block.bias)?;
    block.activation.apply(&pre)
}

/// Task-specific output layer over the episode's classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    /// `hidden_dim × n_classes`; column `c` is the class-`c` weight vector.
    pub weight: Matrix,
    /// `1 × n_classes`
    pub bias: Matrix,
}

impl TaskHead {
    pub fn n_classes(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &Tape) -> Result<HeadParams> {
        Ok(HeadParams {
            weight: tape.leaf(self.weight.clone())?,
            bias: tape.leaf(self.bias.clone())?,
        })
    }

    pub fn frozen(&self) -> HeadParams {
        HeadParams {
            weight: Tensor::constant(self.weight.clone()),
            bias: Tensor::constant(self.bias.clone()),
        }
    }
}

/// Fresh head with fan-in uniform weights and zero bias.
pub fn init_head(hidden_dim: usize, n_classes: usize, rng: &mut impl Rng) -> Result<TaskHead> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "a task head needs at least 2 classes, got {n_classes}"
        )));
    }
    if hidden_dim == 0 {
        return Err(Error::InvalidArgument("hidden_dim must be positive".into()));
    }
    let bound = 1.0 / (hidden_dim as f64).sqrt();
    Ok(TaskHead {
        weight: uniform(hidden_dim, n_classes, bound, rng),
        bias: Matrix::zeros(1, n_classes),
    })
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl HeadParams {
    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn replace(&self, mut tensors: impl Iterator<Item = Tensor>) -> Self {
        Self {
            weight: tensors.next().expect("weight"),
            bias: tensors.next().expect("bias"),
        }
    }

    /// Class logits for `n × hidden_dim` representations.
    pub fn logits(&self, hidden: &Tensor) -> Result<Tensor> {
        hidden.matmul(&self.weight)?.add(&self.bias)
    }

    pub fn to_head(&self) -> TaskHead {
        TaskHead {
            weight: self.weight.to_matrix(),
            bias: self.bias.to_matrix(),
        }
    }
}
