//! Action refinement.
//!
//! The naive action steers straight onto the selected object. The regressor
//! RNN consumes the object's motion feature together with that naive action
//! and emits the final steering action `Δ_t = W_R μ_t`. Training uses a
//! regression term plus a velocity-change penalty over the whole trajectory.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Linear, ParamTensor, Parameterized, RnnCell, RnnStep};
use crate::error::{PilotError, Result};
use crate::geometry::{angular_offset, Action, ViewingAngle};

/// Naive-action components (degrees) are divided by this before entering
/// the network.
pub const ACTION_INPUT_SCALE: f64 = 10.0;

/// Default weight of the smoothness term.
pub const DEFAULT_LAMBDA: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorState {
    pub mu: Vec<f64>,
}

impl RegressorState {
    pub fn zeros(hidden: usize) -> Self {
        RegressorState { mu: vec![0.0; hidden] }
    }
}

/// The action that lands exactly on the main object: `p - l_{t-1}`, wrap-aware.
pub fn naive_action(main_pos: ViewingAngle, prev: ViewingAngle) -> Action {
    angular_offset(prev, main_pos)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorRecord {
    pub rnn: RnnStep,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressorNet {
    pub motion_bins: usize,
    pub cell: RnnCell,
    pub head: Linear,
}

impl RegressorNet {
    pub fn zeros(motion_bins: usize, hidden: usize) -> Self {
        RegressorNet {
            motion_bins,
            cell: RnnCell::zeros("regressor.rnn", motion_bins + 2, hidden),
            head: Linear::new(ParamTensor::zeros("regressor.w_r", &[2, hidden])),
        }
    }

    pub fn init<R: Rng + ?Sized>(motion_bins: usize, hidden: usize, rng: &mut R) -> Self {
        RegressorNet {
            motion_bins,
            cell: RnnCell::init("regressor.rnn", motion_bins + 2, hidden, rng),
            head: Linear::new(ParamTensor::uniform("regressor.w_r", &[2, hidden], hidden, rng)),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.cell.hidden_dim()
    }

    /// `con_V(m, Δ̂ / scale)`.
    pub fn input(&self, motion: &[f64], naive: Action) -> Result<Vec<f64>> {
        if motion.len() != self.motion_bins {
            return Err(PilotError::invalid(format!(
                "motion feature has {} bins, regressor expects {}",
                motion.len(),
                self.motion_bins
            )));
        }
        let mut x = Vec::with_capacity(self.motion_bins + 2);
        x.extend_from_slice(motion);
        x.push(naive.d_azimuth / ACTION_INPUT_SCALE);
        x.push(naive.d_elevation / ACTION_INPUT_SCALE);
        Ok(x)
    }

    pub fn forward(
        &self,
        motion: &[f64],
        naive: Action,
        state: &RegressorState,
    ) -> Result<(RegressorState, Action)> {
        let rec = self.forward_recorded(motion, naive, state)?;
        Ok((RegressorState { mu: rec.rnn.h }, rec.action))
    }

    pub fn forward_recorded(
        &self,
        motion: &[f64],
        naive: Action,
        state: &RegressorState,
    ) -> Result<RegressorRecord> {
        let x = self.input(motion, naive)?;
        let rnn = self.cell.step(x, state.mu.clone())?;
        let out = self.head.forward(&rnn.h)?;
        Ok(RegressorRecord {
            rnn,
            action: Action::new(out[0], out[1]),
        })
    }

    /// Backward through one step given `dL/dΔ_t` and the gradient carried
    /// into `μ_t` from the future. Returns `(dL/dΔ̂_t, dL/dμ_{t-1})`.
    pub fn backward_step(
        &mut self,
        rec: &RegressorRecord,
        d_action: [f64; 2],
        d_mu_carry: &[f64],
    ) -> ([f64; 2], Vec<f64>) {
        let mut dmu = self.head.backward(&rec.rnn.h, &d_action);
        for (a, b) in dmu.iter_mut().zip(d_mu_carry) {
            *a += b;
        }
        let (dx, dmu_prev) = self.cell.backward_step(&rec.rnn, &dmu);
        let k = self.motion_bins;
        (
            [dx[k] / ACTION_INPUT_SCALE, dx[k + 1] / ACTION_INPUT_SCALE],
            dmu_prev,
        )
    }
}

impl Parameterized for RegressorNet {
    fn tensors(&self) -> Vec<&ParamTensor> {
        let mut v = self.cell.tensors();
        v.push(&self.head.weight);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.cell.tensors_mut();
        v.push(&mut self.head.weight);
        v
    }
}

/// Loss terms of one trajectory, in degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `sum_t ||l_t - l_t^gt||`
    pub regression: f64,
    /// `sum_t ||v_t - v_{t-1}||` with `v_1 = 0`
    pub smoothness: f64,
    /// `regression + lambda * smoothness`
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(regression: f64, smoothness: f64, lambda: f64) -> Self {
        LossBreakdown {
            regression,
            smoothness,
            total: regression + lambda * smoothness,
            lambda,
        }
    }
}

fn check_pair(pred: &[ViewingAngle], gt: &[ViewingAngle], lambda: f64) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(PilotError::invalid(format!(
            "trajectory lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.len() < 2 {
        return Err(PilotError::invalid("trajectory loss needs T >= 2"));
    }
    if !(lambda >= 0.0) {
        return Err(PilotError::invalid(format!("lambda {lambda} must be >= 0")));
    }
    Ok(())
}

pub fn trajectory_loss(pred: &[ViewingAngle], gt: &[ViewingAngle], lambda: f64) -> Result<LossBreakdown> {
    trajectory_loss_grad(pred, gt, lambda).map(|(l, _)| l)
}

fn unit(a: Action) -> [f64; 2] {
    let n = a.norm();
    if n == 0.0 {
        [0.0, 0.0]
    } else {
        [a.d_azimuth / n, a.d_elevation / n]
    }
}

/// Loss and its gradient with respect to each predicted `(azimuth,
/// elevation)`. At zero-norm points the subgradient 0 is used.
pub fn trajectory_loss_grad(
    pred: &[ViewingAngle],
    gt: &[ViewingAngle],
    lambda: f64,
) -> Result<(LossBreakdown, Vec<[f64; 2]>)> {
    check_pair(pred, gt, lambda)?;
    let t_len = pred.len();
    let mut grad = vec![[0.0; 2]; t_len];

    let mut regression = 0.0;
    for t in 0..t_len {
        let e = angular_offset(gt[t], pred[t]);
        regression += e.norm();
        let u = unit(e);
        grad[t][0] += u[0];
        grad[t][1] += u[1];
    }

    // v[0] = 0 by convention; v[t] = offset(pred[t-1], pred[t])
    let mut v = vec![Action::ZERO; t_len];
    for t in 1..t_len {
        v[t] = angular_offset(pred[t - 1], pred[t]);
    }
    let mut dv = vec![[0.0; 2]; t_len];
    let mut smoothness = 0.0;
    for t in 1..t_len {
        let diff = v[t].sub(&v[t - 1]);
        smoothness += diff.norm();
        let u = unit(diff);
        dv[t][0] += lambda * u[0];
        dv[t][1] += lambda * u[1];
        if t >= 2 {
            dv[t - 1][0] -= lambda * u[0];
            dv[t - 1][1] -= lambda * u[1];
        }
    }
    for t in 1..t_len {
        for c in 0..2 {
            grad[t][c] += dv[t][c];
            grad[t - 1][c] -= dv[t][c];
        }
    }
    Ok((LossBreakdown::new(regression, smoothness, lambda), grad))
}
