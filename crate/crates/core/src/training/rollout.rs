//! Differentiable rollouts of the full agent over a training window, and the
//! matching backward pass.
//!
//! The supervised gradient flows through the regressor and through the
//! viewing-angle chain `l_t = l_{t-1} + Δ_t` (which also feeds the next naive
//! action). The discrete selection is not differentiable, so the selector
//! only receives the policy-gradient signal at its logits.

use crate::error::{PilotError, Result};
use crate::geometry::{apply_action_tracked, Action, ViewingAngle};
use crate::model::PilotModel;
use crate::observation::FrameObservation;
use crate::regressor::{naive_action, trajectory_loss_grad, LossBreakdown, RegressorNet, RegressorRecord, RegressorState};
use crate::selector::{policy_gradient_contribution, SelectorRecord, SelectorState, SelectionDistribution};

use super::reward;

/// One regressor step for a chosen slot.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressStep {
    pub naive: Action,
    pub record: RegressorRecord,
    pub angle: ViewingAngle,
    /// Elevation hit a pole and was clamped (zero elevation derivative).
    pub clamped: bool,
}

pub fn regress_step(
    reg: &RegressorNet,
    obs: &FrameObservation,
    index: usize,
    prev: ViewingAngle,
    state: &RegressorState,
) -> Result<RegressStep> {
    if index >= obs.dims().n {
        return Err(PilotError::invalid(format!("candidate index {index} out of range")));
    }
    let target = obs.object(index);
    let naive = naive_action(target.position, prev);
    let record = reg.forward_recorded(&target.motion, naive, state)?;
    let (angle, clamped) = apply_action_tracked(prev, record.action);
    Ok(RegressStep {
        naive,
        record,
        angle,
        clamped,
    })
}

/// Reward of steering toward candidate `index` from the current rollout
/// context, evaluated on a branch: the caller's recurrent state is not
/// touched.
pub fn candidate_reward(
    reg: &RegressorNet,
    obs: &FrameObservation,
    gt: ViewingAngle,
    index: usize,
    prev: ViewingAngle,
    state: &RegressorState,
    eta: f64,
) -> Result<f64> {
    let step = regress_step(reg, obs, index, prev, state)?;
    Ok(reward(step.angle, gt, eta))
}

/// Backward through a chain of regressor steps given `dL/dl_t` for every
/// frame. The initial angle is treated as a constant.
pub fn regressor_chain_backward(
    reg: &mut RegressorNet,
    steps: &[&RegressStep],
    d_angles: &[[f64; 2]],
) -> Result<()> {
    if steps.is_empty() {
        return Err(PilotError::State("regressor backward without forward record".into()));
    }
    if steps.len() != d_angles.len() {
        return Err(PilotError::invalid("one angle gradient per step required"));
    }
    let mut d_future = [0.0; 2];
    let mut d_mu = vec![0.0; reg.hidden_dim()];
    for t in (0..steps.len()).rev() {
        let s = steps[t];
        let el_mask = if s.clamped { 0.0 } else { 1.0 };
        let g = [d_angles[t][0] + d_future[0], (d_angles[t][1] + d_future[1]) * el_mask];
        // l_t = l_{t-1} + Δ_t, Δ̂_t = p_t - l_{t-1}
        let (d_naive, d_mu_prev) = reg.backward_step(&s.record, g, &d_mu);
        d_future = [g[0] - d_naive[0], g[1] - d_naive[1]];
        d_mu = d_mu_prev;
    }
    Ok(())
}

/// One frame of a recorded rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutStep {
    pub selector: SelectorRecord,
    /// `samples[0]` drives the rollout; the rest are branch evaluations.
    pub samples: Vec<usize>,
    pub rewards: Vec<f64>,
    pub regress: RegressStep,
}

impl RolloutStep {
    pub fn index(&self) -> usize {
        self.samples[0]
    }

    pub fn dist(&self) -> &SelectionDistribution {
        &self.selector.dist
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
}

impl Rollout {
    pub fn trajectory(&self) -> Vec<ViewingAngle> {
        self.steps.iter().map(|s| s.regress.angle).collect()
    }

    /// Mean reward of the rollout's own trajectory.
    pub fn mean_reward(&self) -> f64 {
        let n = self.steps.len().max(1) as f64;
        self.steps.iter().map(|s| s.rewards[0]).sum::<f64>() / n
    }
}

/// Runs the full agent over `frames` from `init`, choosing candidates with
/// `choose(t, dist)` (sampling during training, fixed indices in tests).
pub fn rollout(
    model: &PilotModel,
    frames: &[FrameObservation],
    gt: &[ViewingAngle],
    init: ViewingAngle,
    eta: f64,
    mut choose: impl FnMut(usize, &SelectionDistribution) -> Vec<usize>,
) -> Result<Rollout> {
    if frames.len() != gt.len() || frames.is_empty() {
        return Err(PilotError::invalid("rollout needs matching, non-empty frames and gt"));
    }
    let mut sel_state = SelectorState::zeros(model.arch.hidden_selector);
    let mut reg_state = RegressorState::zeros(model.arch.hidden_regressor);
    let mut prev = init;
    let mut steps = Vec::with_capacity(frames.len());
    for (t, obs) in frames.iter().enumerate() {
        let selector = model.selector.forward_recorded(obs, &sel_state)?;
        let samples = choose(t, &selector.dist);
        if samples.is_empty() {
            return Err(PilotError::invalid("selection produced no samples"));
        }
        let regress = regress_step(&model.regressor, obs, samples[0], prev, &reg_state)?;
        let mut rewards = Vec::with_capacity(samples.len());
        rewards.push(reward(regress.angle, gt[t], eta));
        for &i in &samples[1..] {
            rewards.push(candidate_reward(&model.regressor, obs, gt[t], i, prev, &reg_state, eta)?);
        }
        sel_state = SelectorState {
            h: selector.rnn.h.clone(),
        };
        reg_state = RegressorState {
            mu: regress.record.rnn.h.clone(),
        };
        prev = regress.angle;
        steps.push(RolloutStep {
            selector,
            samples,
            rewards,
            regress,
        });
    }
    Ok(Rollout { steps })
}

/// Weights of the two gradient sources.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HybridWeights {
    pub lambda: f64,
    pub supervised: f64,
    pub policy: f64,
    pub baseline: bool,
}

/// Accumulates the hybrid gradient of one rollout into `model`:
/// `supervised * (regression + lambda * smoothness)` descended through the
/// regressor chain, plus `policy *` REINFORCE ascent at the selector logits.
/// Returns the supervised loss terms.
pub fn backward_hybrid(
    model: &mut PilotModel,
    rollout: &Rollout,
    gt: &[ViewingAngle],
    w: HybridWeights,
) -> Result<LossBreakdown> {
    let traj = rollout.trajectory();
    let (loss, mut d_angles) = trajectory_loss_grad(&traj, gt, w.lambda)?;
    for d in &mut d_angles {
        d[0] *= w.supervised;
        d[1] *= w.supervised;
    }
    if w.supervised != 0.0 {
        let steps: Vec<&RegressStep> = rollout.steps.iter().map(|s| &s.regress).collect();
        regressor_chain_backward(&mut model.regressor, &steps, &d_angles)?;
    }
    if w.policy != 0.0 {
        let mut dlogits = Vec::with_capacity(rollout.steps.len());
        for s in &rollout.steps {
            let pg = policy_gradient_contribution(s.dist(), &s.samples, &s.rewards, w.baseline)?;
            // minimizing, so the ascent direction enters with a minus sign
            dlogits.push(pg.into_iter().map(|g| -w.policy * g).collect());
        }
        let records: Vec<SelectorRecord> = rollout.steps.iter().map(|s| s.selector.clone()).collect();
        model.selector.backward(&records, &dlogits)?;
    }
    Ok(loss)
}
