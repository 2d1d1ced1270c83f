use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

fn check_lr(lr: f64) -> Result<()> {
    if lr < 0.0 || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    Ok(())
}

fn check_shapes(params: &[Matrix], grads: &[Matrix]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
    }
    Ok(())
}

/// Plain gradient descent: `p - lr * g` for every parameter.
pub fn sgd_step(params: &[Matrix], grads: &[Matrix], lr: f64) -> Result<Vec<Matrix>> {
    check_lr(lr)?;
    check_shapes(params, grads)?;
    params
        .iter()
        .zip(grads)
        .map(|(p, g)| p.axpy_neg(lr, g))
        .collect()
}

/// Multiplies the learning rate by `factor` every `every` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            every: 500,
            factor: 0.5,
        }
    }
}

impl StepDecay {
    /// Learning rate in effect after `steps_taken` updates.
    pub fn lr_at(&self, base: f64, steps_taken: usize) -> f64 {
        if self.every == 0 {
            return base;
        }
        let periods = (steps_taken / self.every) as i32;
        base * self.factor.powi(periods)
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: Option<StepDecay>,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: usize,
}

impl Adam {
    pub fn new(lr: f64) -> Result<Self> {
        check_lr(lr)?;
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: None,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    pub fn with_schedule(mut self, schedule: StepDecay) -> Self {
        self.schedule = Some(schedule);
        self
    }

    pub fn steps_taken(&self) -> usize {
        self.t
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        match &self.schedule {
            Some(s) => s.lr_at(self.lr, self.t),
            None => self.lr,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
        if self.m.is_empty() {
            self.m = grads
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len()
            || self
                .m
                .iter()
                .zip(grads)
                .any(|(m, g)| m.shape() != g.shape())
        {
            return Err(Error::InvalidArgument(
                "adam moments do not match parameter shapes".into(),
            ));
        }
        let lr = self.current_lr();
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
            for ((pi, &gi), (mi, vi)) in p.data_mut().iter_mut().zip(g.data()).zip(moments) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
