//! Differentiable operations and batch standardization.
//!
//! Each [`Op`] knows its forward value and its local backward rule. The
//! builder methods on [`Graph`] (`linear`, `tanh`, `mse`, ...) are the usual way
//! to put them into a graph.

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::tensor::{EwKind, Tensor};

/// Default ε for [`standardize`].
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// `W·x + b`
    Linear,
    /// `W·x`
    MatMul,
    Add,
    Hadamard,
    Tanh,
    Sigmoid,
    /// Mean squared error against a constant target.
    Mse {
        target: Tensor,
    },
    /// Sum of scalar losses.
    SumLoss,
}

fn arity(op: &Op, inputs: &[&Tensor], expected: usize) -> Result<()> {
    if inputs.len() != expected {
        return Err(Error::Argument(format!(
            "{} takes {expected} inputs, got {}",
            op.name(),
            inputs.len()
        )));
    }
    Ok(())
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Linear => "linear",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Hadamard => "hadamard",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Mse { .. } => "mse",
            Op::SumLoss => "sum_loss",
        }
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        match self {
            Op::Linear => {
                arity(self, inputs, 3)?;
                let wx = inputs[0].matmul(inputs[1])?;
                if wx.shape() != inputs[2].shape() {
                    return Err(Error::Dimension {
                        op: "linear bias",
                        lhs: wx.shape(),
                        rhs: inputs[2].shape(),
                    });
                }
                wx.add(inputs[2])
            }
            Op::MatMul => {
                arity(self, inputs, 2)?;
                inputs[0].matmul(inputs[1])
            }
            Op::Add => {
                arity(self, inputs, 2)?;
                inputs[0].ew(inputs[1], EwKind::Add)
            }
            Op::Hadamard => {
                arity(self, inputs, 2)?;
                inputs[0].ew(inputs[1], EwKind::Mul)
            }
            Op::Tanh => {
                arity(self, inputs, 1)?;
                Ok(inputs[0].map_with(f64::tanh))
            }
            Op::Sigmoid => {
                arity(self, inputs, 1)?;
                Ok(inputs[0].map_with(crate::tensor::sigmoid))
            }
            Op::Mse { target } => {
                arity(self, inputs, 1)?;
                let diff = inputs[0].sub(target)?;
                let n = diff.len() as f64;
                Ok(Tensor::scalar(
                    diff.data().iter().map(|d| d * d).sum::<f64>() / n,
                ))
            }
            Op::SumLoss => {
                if let Some(bad) = inputs.iter().find(|t| t.shape() != (1, 1)) {
                    return Err(Error::Dimension {
                        op: "sum_loss",
                        lhs: (1, 1),
                        rhs: bad.shape(),
                    });
                }
                Ok(Tensor::scalar(inputs.iter().map(|t| t.item()).sum()))
            }
        }
    }

    /// Gradients with respect to each input, given the forward output and
    /// the gradient arriving at it.
    pub fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
    ) -> Result<Vec<Tensor>> {
        Ok(match self {
            Op::Linear => {
                let (w, x) = (inputs[0], inputs[1]);
                vec![
                    grad.matmul(&x.transpose())?,
                    w.transpose().matmul(grad)?,
                    grad.clone(),
                ]
            }
            Op::MatMul => {
                let (w, x) = (inputs[0], inputs[1]);
                vec![grad.matmul(&x.transpose())?, w.transpose().matmul(grad)?]
            }
            Op::Add => vec![grad.clone(), grad.clone()],
            Op::Hadamard => vec![grad.mul(inputs[1])?, grad.mul(inputs[0])?],
            Op::Tanh => vec![grad.mul(&output.map_with(|y| 1.0 - y * y))?],
            Op::Sigmoid => vec![grad.mul(&output.map_with(|y| y * (1.0 - y)))?],
            Op::Mse { target } => {
                let diff = inputs[0].sub(target)?;
                let k = 2.0 / diff.len() as f64 * grad.item();
                vec![diff.scale(k)]
            }
            Op::SumLoss => inputs.iter().map(|_| grad.clone()).collect(),
        })
    }
}

impl Graph {
    pub fn linear(&mut self, w: VarId, x: VarId, b: VarId) -> Result<VarId> {
        self.apply(Op::Linear, &[w, x, b])
    }

    pub fn matmul(&mut self, w: VarId, x: VarId) -> Result<VarId> {
        self.apply(Op::MatMul, &[w, x])
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.apply(Op::Add, &[a, b])
    }

    /// Left-to-right sum of two or more same-shaped variables.
    pub fn add_all(&mut self, terms: &[VarId]) -> Result<VarId> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::Argument("add_all needs at least one term".into()))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn hadamard(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.apply(Op::Hadamard, &[a, b])
    }

    pub fn tanh(&mut self, x: VarId) -> Result<VarId> {
        self.apply(Op::Tanh, &[x])
    }

    pub fn sigmoid(&mut self, x: VarId) -> Result<VarId> {
        self.apply(Op::Sigmoid, &[x])
    }

    pub fn mse(&mut self, pred: VarId, target: &Tensor) -> Result<VarId> {
        self.apply(
            Op::Mse {
                target: target.clone(),
            },
            &[pred],
        )
    }

    pub fn sum_loss(&mut self, losses: &[VarId]) -> Result<VarId> {
        if losses.is_empty() {
            return Err(Error::Argument("sum_loss needs at least one loss".into()));
        }
        self.apply(Op::SumLoss, losses)
    }
}

/// Per-feature statistics of a mini-batch (rows are samples, columns are features).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Tensor,
    /// Population variance (divisor `m`).
    pub variance: Tensor,
    pub m: usize,
    pub epsilon: f64,
}

pub fn batch_stats(batch: &Tensor, epsilon: f64) -> Result<BatchStats> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Argument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (m, k) = batch.shape();
    let mut mean = vec![0.0; k];
    for i in 0..m {
        for (j, mu) in mean.iter_mut().enumerate() {
            *mu += batch.get(i, j);
        }
    }
    for mu in &mut mean {
        *mu /= m as f64;
    }
    let mut variance = vec![0.0; k];
    for i in 0..m {
        for (j, var) in variance.iter_mut().enumerate() {
            let d = batch.get(i, j) - mean[j];
            *var += d * d;
        }
    }
    for var in &mut variance {
        *var /= m as f64;
    }
    Ok(BatchStats {
        mean: Tensor::new(1, k, mean)?,
        variance: Tensor::new(1, k, variance)?,
        m,
        epsilon,
    })
}

/// `(x - mean) / sqrt(variance + epsilon)` per feature.
pub fn standardize(batch: &Tensor, stats: &BatchStats) -> Result<Tensor> {
    let (m, k) = batch.shape();
    if stats.mean.cols() != k {
        return Err(Error::Dimension {
            op: "standardize",
            lhs: batch.shape(),
            rhs: stats.mean.shape(),
        });
    }
    let inv_std: Vec<f64> = stats
        .variance
        .data()
        .iter()
        .map(|v| 1.0 / (v + stats.epsilon).sqrt())
        .collect();
    let mut out = Vec::with_capacity(m * k);
    for i in 0..m {
        for (j, s) in inv_std.iter().enumerate() {
            out.push((batch.get(i, j) - stats.mean.data()[j]) * s);
        }
    }
    Tensor::new(m, k, out)
}
