//! A deliberately small differentiable core: named parameter tensors with
//! gradient accumulators, a tanh RNN cell with backpropagation through time,
//! bias-free affine heads, softmax, finite-difference gradient checking and
//! plain SGD with a step-decay learning-rate schedule.
//!
//! Everything is `f64` and row-major. Gradients are hand-derived; the
//! [`gradcheck`] module is the safety net for every backward pass.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod rnn;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PilotError, Result};

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{gradient_check, CorruptGradient, GradCheckReport, Objective, TensorCheck};
pub use optim::{clip_grad_norm, grad_norm, sgd_step, LrSchedule};
pub use rnn::{bptt_backward, RnnCell, RnnStep, RnnTape};

/// A named trainable array with a same-shape gradient accumulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let len = shape.iter().product();
        ParamTensor {
            name: name.into(),
            shape: shape.to_vec(),
            values: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    /// Uniform in `[-s, s]` with `s = 1 / sqrt(fan_in)`.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let mut t = ParamTensor::zeros(name, shape);
        let s = 1.0 / (fan_in.max(1) as f64).sqrt();
        for v in &mut t.values {
            *v = rng.random_range(-s..=s);
        }
        t
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.clear();
        self.grad.resize(self.values.len(), 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape[..] {
            [r, c] => (r, c),
            [r] => (r, 1),
            _ => panic!("tensor {} is not rank 2", self.name),
        }
    }
}

/// Anything that owns parameter tensors.
pub trait Parameterized {
    fn tensors(&self) -> Vec<&ParamTensor>;
    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

impl Parameterized for Vec<ParamTensor> {
    fn tensors(&self) -> Vec<&ParamTensor> {
        self.iter().collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.iter_mut().collect()
    }
}

/// `out = W x` for a row-major `rows x cols` matrix.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out += W^T v`.
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for (r, &vr) in v.iter().enumerate().take(rows) {
        if vr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vr;
        }
    }
}

/// `g += a b^T`.
pub fn outer_acc(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (gv, bv) in row.iter_mut().zip(b) {
            *gv += ar * bv;
        }
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Bias-free affine map `y = W x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamTensor,
}

impl Linear {
    pub fn new(weight: ParamTensor) -> Self {
        Linear { weight }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims2().0
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims2().1
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (rows, cols) = self.weight.dims2();
        if x.len() != cols {
            return Err(PilotError::invalid(format!(
                "{}: input length {} != {cols}",
                self.weight.name,
                x.len()
            )));
        }
        let mut y = vec![0.0; rows];
        matvec(&self.weight.values, rows, cols, x, &mut y);
        Ok(y)
    }

    /// Accumulates `dW += dy x^T` and returns `dx = W^T dy`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Vec<f64> {
        let (rows, cols) = self.weight.dims2();
        if self.weight.grad.len() != self.weight.values.len() {
            self.weight.zero_grad();
        }
        outer_acc(&mut self.weight.grad, dy, x);
        let mut dx = vec![0.0; cols];
        matvec_t_acc(&self.weight.values, rows, cols, dy, &mut dx);
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[0.3 + 57.0, -1.2 + 57.0, 2.0 + 57.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_scalar_loss_gradient_is_input() {
        // y = W x, loss = y  =>  dL/dW = x
        let mut lin = Linear::new(ParamTensor::zeros("w", &[1, 3]));
        lin.weight.values = vec![0.5, -1.0, 2.0];
        let x = [1.5, 2.5, -0.5];
        let y = lin.forward(&x).unwrap();
        assert_eq!(y, vec![0.75 - 2.5 - 1.0]);
        let dx = lin.backward(&x, &[1.0]);
        assert_eq!(lin.weight.grad, x.to_vec());
        assert_eq!(dx, lin.weight.values);
    }

    #[test]
    fn linear_rejects_bad_input() {
        let lin = Linear::new(ParamTensor::zeros("w", &[2, 3]));
        assert!(lin.forward(&[1.0]).is_err());
    }
}
