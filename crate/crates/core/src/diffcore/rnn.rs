//! Single-layer tanh (Elman) cell: `h_t = tanh(W_xh x_t + W_hh h_{t-1} + b)`.

use rand::Rng;

use super::{matvec, matvec_t_acc, outer_acc, ParamTensor, Parameterized};
use crate::error::{PilotError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RnnCell {
    pub w_xh: ParamTensor,
    pub w_hh: ParamTensor,
    pub bias: ParamTensor,
}

/// Inputs and output of one recorded forward step.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub h: Vec<f64>,
}

/// Forward record of an unrolled sequence, consumed by [`bptt_backward`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RnnTape {
    pub steps: Vec<RnnStep>,
}

impl RnnTape {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl RnnCell {
    pub fn zeros(prefix: &str, input: usize, hidden: usize) -> Self {
        RnnCell {
            w_xh: ParamTensor::zeros(format!("{prefix}.w_xh"), &[hidden, input]),
            w_hh: ParamTensor::zeros(format!("{prefix}.w_hh"), &[hidden, hidden]),
            bias: ParamTensor::zeros(format!("{prefix}.b"), &[hidden]),
        }
    }

    pub fn init<R: Rng + ?Sized>(prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        RnnCell {
            w_xh: ParamTensor::uniform(format!("{prefix}.w_xh"), &[hidden, input], input, rng),
            w_hh: ParamTensor::uniform(format!("{prefix}.w_hh"), &[hidden, hidden], hidden, rng),
            bias: ParamTensor::uniform(format!("{prefix}.b"), &[hidden], input, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_xh.dims2().1
    }

    pub fn hidden_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn forward(&self, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
        let (hid, inp) = (self.hidden_dim(), self.input_dim());
        if x.len() != inp || h_prev.len() != hid {
            return Err(PilotError::invalid(format!(
                "{}: got input {} / state {}, expected {inp} / {hid}",
                self.w_xh.name,
                x.len(),
                h_prev.len()
            )));
        }
        let mut a = vec![0.0; hid];
        let mut rec = vec![0.0; hid];
        matvec(&self.w_xh.values, hid, inp, x, &mut a);
        matvec(&self.w_hh.values, hid, hid, h_prev, &mut rec);
        Ok(a
            .iter()
            .zip(&rec)
            .zip(&self.bias.values)
            .map(|((a, r), b)| (a + r + b).tanh())
            .collect())
    }

    /// Forward step that also returns the record needed for backward.
    pub fn step(&self, x: Vec<f64>, h_prev: Vec<f64>) -> Result<RnnStep> {
        let h = self.forward(&x, &h_prev)?;
        Ok(RnnStep { x, h_prev, h })
    }

    /// Backward through one step. `dh` is the total gradient reaching `h_t`.
    /// Accumulates parameter gradients and returns `(dx, dh_prev)`.
    pub fn backward_step(&mut self, step: &RnnStep, dh: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (hid, inp) = (self.hidden_dim(), self.input_dim());
        for t in self.tensors_mut() {
            if t.grad.len() != t.values.len() {
                t.zero_grad();
            }
        }
        let da: Vec<f64> = dh
            .iter()
            .zip(&step.h)
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        outer_acc(&mut self.w_xh.grad, &da, &step.x);
        outer_acc(&mut self.w_hh.grad, &da, &step.h_prev);
        for (g, d) in self.bias.grad.iter_mut().zip(&da) {
            *g += d;
        }
        let mut dx = vec![0.0; inp];
        matvec_t_acc(&self.w_xh.values, hid, inp, &da, &mut dx);
        let mut dh_prev = vec![0.0; hid];
        matvec_t_acc(&self.w_hh.values, hid, hid, &da, &mut dh_prev);
        (dx, dh_prev)
    }
}

impl Parameterized for RnnCell {
    fn tensors(&self) -> Vec<&ParamTensor> {
        vec![&self.w_xh, &self.w_hh, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.w_xh, &mut self.w_hh, &mut self.bias]
    }
}

/// Backpropagation through time over a recorded sequence.
///
/// `upstream[t]` is the gradient of the loss with respect to `h_t` coming
/// from outside the recurrence (heads, losses). Parameter gradients are
/// accumulated into the cell; the per-step input gradients are returned.
pub fn bptt_backward(
    cell: &mut RnnCell,
    tape: &RnnTape,
    upstream: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    if tape.is_empty() {
        return Err(PilotError::State(
            "backward called without a recorded forward pass".into(),
        ));
    }
    if upstream.len() != tape.len() {
        return Err(PilotError::invalid(format!(
            "{} upstream gradients for {} recorded steps",
            upstream.len(),
            tape.len()
        )));
    }
    let hid = cell.hidden_dim();
    let mut carry = vec![0.0; hid];
    let mut dxs = vec![Vec::new(); tape.len()];
    for t in (0..tape.len()).rev() {
        let dh: Vec<f64> = upstream[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
        let (dx, dh_prev) = cell.backward_step(&tape.steps[t], &dh);
        dxs[t] = dx;
        carry = dh_prev;
    }
    Ok(dxs)
}
