//! Scalar objectives with hand-written gradients, bundled for finite
//! difference checking. Each one freezes the discrete choices (selected
//! indices, rewards) so the remaining function is smooth almost everywhere.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffcore::{gradient_check, CorruptGradient, GradCheckReport, Objective, ParamTensor};
use crate::error::Result;
use crate::geometry::ViewingAngle;
use crate::model::{Architecture, PilotModel};
use crate::observation::{synth_scene, FrameObservation, SceneConfig};
use crate::regressor::{trajectory_loss, trajectory_loss_grad};
use crate::selector::{policy_gradient_contribution, SelectorState};

use super::rollout::{backward_hybrid, regressor_chain_backward, rollout, HybridWeights, RegressStep, Rollout};

/// Name of the single tensor used by [`TrajectoryObjective`].
pub const TRAJECTORY_TENSOR: &str = "trajectory";

/// `-sum_t (1/Q) sum_q (r_q - b_t) log S_t(i_q)` with frozen samples and
/// rewards; its gradient is the negated REINFORCE estimate.
pub struct SelectorObjective {
    pub frames: Vec<FrameObservation>,
    pub samples: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub baseline: bool,
}

impl SelectorObjective {
    fn weights(&self, t: usize) -> Vec<f64> {
        let r = &self.rewards[t];
        let q = r.len() as f64;
        let b = if self.baseline { r.iter().sum::<f64>() / q } else { 0.0 };
        r.iter().map(|x| (x - b) / q).collect()
    }
}

impl Objective<PilotModel> for SelectorObjective {
    fn loss(&self, model: &PilotModel) -> Result<f64> {
        let mut state = SelectorState::zeros(model.arch.hidden_selector);
        let mut total = 0.0;
        for (t, obs) in self.frames.iter().enumerate() {
            let (next, dist) = model.selector.forward(obs, &state)?;
            for (&i, w) in self.samples[t].iter().zip(self.weights(t)) {
                total -= w * dist.probs[i].ln();
            }
            state = next;
        }
        Ok(total)
    }

    fn gradient(&self, model: &mut PilotModel) -> Result<f64> {
        let mut state = SelectorState::zeros(model.arch.hidden_selector);
        let mut records = Vec::with_capacity(self.frames.len());
        let mut dlogits = Vec::with_capacity(self.frames.len());
        let mut total = 0.0;
        for (t, obs) in self.frames.iter().enumerate() {
            let rec = model.selector.forward_recorded(obs, &state)?;
            for (&i, w) in self.samples[t].iter().zip(self.weights(t)) {
                total -= w * rec.dist.probs[i].ln();
            }
            let pg = policy_gradient_contribution(&rec.dist, &self.samples[t], &self.rewards[t], self.baseline)?;
            dlogits.push(pg.into_iter().map(|g| -g).collect());
            state = SelectorState { h: rec.rnn.h.clone() };
            records.push(rec);
        }
        model.selector.backward(&records, &dlogits)?;
        Ok(total)
    }
}

fn forced_rollout(
    model: &PilotModel,
    frames: &[FrameObservation],
    gt: &[ViewingAngle],
    init: ViewingAngle,
    samples: &[Vec<usize>],
) -> Result<Rollout> {
    rollout(model, frames, gt, init, super::DEFAULT_ETA, |t, _| samples[t].clone())
}

/// Trajectory loss of the full agent with the selected slots frozen.
pub struct RegressorObjective {
    pub frames: Vec<FrameObservation>,
    pub gt: Vec<ViewingAngle>,
    pub init: ViewingAngle,
    pub indices: Vec<usize>,
    pub lambda: f64,
}

impl RegressorObjective {
    fn samples(&self) -> Vec<Vec<usize>> {
        self.indices.iter().map(|&i| vec![i]).collect()
    }
}

impl Objective<PilotModel> for RegressorObjective {
    fn loss(&self, model: &PilotModel) -> Result<f64> {
        let r = forced_rollout(model, &self.frames, &self.gt, self.init, &self.samples())?;
        Ok(trajectory_loss(&r.trajectory(), &self.gt, self.lambda)?.total)
    }

    fn gradient(&self, model: &mut PilotModel) -> Result<f64> {
        let r = forced_rollout(model, &self.frames, &self.gt, self.init, &self.samples())?;
        let (loss, d) = trajectory_loss_grad(&r.trajectory(), &self.gt, self.lambda)?;
        let steps: Vec<&RegressStep> = r.steps.iter().map(|s| &s.regress).collect();
        regressor_chain_backward(&mut model.regressor, &steps, &d)?;
        Ok(loss.total)
    }
}

/// The hybrid training objective with frozen samples and rewards:
/// `sup * L_traj - pg * sum_t (1/Q) sum_q (r_q - b_t) log S_t(i_q)`.
/// The trajectory follows `samples[t][0]`.
pub struct JointObjective {
    pub frames: Vec<FrameObservation>,
    pub gt: Vec<ViewingAngle>,
    pub init: ViewingAngle,
    pub samples: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
    pub weights: HybridWeights,
}

impl JointObjective {
    fn frozen_rollout(&self, model: &PilotModel) -> Result<Rollout> {
        let mut r = forced_rollout(model, &self.frames, &self.gt, self.init, &self.samples)?;
        for (s, rw) in r.steps.iter_mut().zip(&self.rewards) {
            s.rewards = rw.clone();
        }
        Ok(r)
    }

    fn selector_part(&self) -> SelectorObjective {
        SelectorObjective {
            frames: self.frames.clone(),
            samples: self.samples.clone(),
            rewards: self.rewards.clone(),
            baseline: self.weights.baseline,
        }
    }
}

impl Objective<PilotModel> for JointObjective {
    fn loss(&self, model: &PilotModel) -> Result<f64> {
        let r = self.frozen_rollout(model)?;
        let sup = trajectory_loss(&r.trajectory(), &self.gt, self.weights.lambda)?.total;
        let pg = self.selector_part().loss(model)?;
        Ok(self.weights.supervised * sup + self.weights.policy * pg)
    }

    fn gradient(&self, model: &mut PilotModel) -> Result<f64> {
        let r = self.frozen_rollout(model)?;
        let sup = backward_hybrid(model, &r, &self.gt, self.weights)?.total;
        let pg = self.selector_part().loss(model)?;
        Ok(self.weights.supervised * sup + self.weights.policy * pg)
    }
}

/// The trajectory loss as a function of the predicted angles themselves,
/// stored as a `[T, 2]` tensor of (azimuth, elevation).
pub struct TrajectoryObjective {
    pub gt: Vec<ViewingAngle>,
    pub lambda: f64,
}

impl TrajectoryObjective {
    pub fn tensor(pred: &[ViewingAngle]) -> Vec<ParamTensor> {
        let mut t = ParamTensor::zeros(TRAJECTORY_TENSOR, &[pred.len(), 2]);
        t.values = pred.iter().flat_map(|a| [a.azimuth(), a.elevation()]).collect();
        vec![t]
    }

    fn angles(m: &[ParamTensor]) -> Vec<ViewingAngle> {
        m[0].values.chunks(2).map(|c| ViewingAngle::new(c[0], c[1])).collect()
    }
}

impl Objective<Vec<ParamTensor>> for TrajectoryObjective {
    fn loss(&self, m: &Vec<ParamTensor>) -> Result<f64> {
        Ok(trajectory_loss(&Self::angles(m), &self.gt, self.lambda)?.total)
    }

    fn gradient(&self, m: &mut Vec<ParamTensor>) -> Result<f64> {
        let (loss, d) = trajectory_loss_grad(&Self::angles(m), &self.gt, self.lambda)?;
        for (g, v) in m[0].grad.iter_mut().zip(d.iter().flatten()) {
            *g += v;
        }
        Ok(loss.total)
    }
}

/// One objective checked at one seed.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub objective: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckSuite {
    pub entries: Vec<GradCheckEntry>,
    pub passed: bool,
}

impl GradCheckSuite {
    pub fn max_rel_error(&self, objective: &str) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.objective == objective)
            .map(|e| e.report.max_rel_error())
            .fold(0.0, f64::max)
    }
}

/// Finite-difference step used by [`run_gradchecks`].
pub const GRADCHECK_STEP: f64 = 1e-5;

const HEAD_SCALE: f64 = 10.0;

fn check<M, O: Objective<M>>(
    model: &mut M,
    obj: O,
    corrupt: Option<&str>,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    M: crate::diffcore::Parameterized,
{
    match corrupt {
        Some(name) => gradient_check(
            model,
            &CorruptGradient {
                inner: obj,
                tensor: name.to_string(),
            },
            GRADCHECK_STEP,
            tolerance,
        ),
        None => gradient_check(model, &obj, GRADCHECK_STEP, tolerance),
    }
}

/// Checks the selector, regressor, joint and trajectory-loss gradients at
/// each seed on a synthetic `frames`-frame episode. With `corrupt`, the
/// named tensor's analytic gradient is deliberately perturbed.
pub fn run_gradchecks(
    arch: Architecture,
    frames: usize,
    lambda: f64,
    seeds: &[u64],
    tolerance: f64,
    corrupt: Option<&str>,
) -> Result<GradCheckSuite> {
    arch.validate()?;
    let mut entries = Vec::new();
    for &seed in seeds {
        let scene = SceneConfig {
            frames,
            objects: arch.n,
            slots: arch.n,
            appearance_dim: arch.d,
            motion_bins: arch.k,
            ..SceneConfig::default()
        };
        let ep = synth_scene(&scene, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut model = PilotModel::init(arch, &mut rng);
        // A freshly initialized head steers by fractions of a degree, which
        // leaves velocity differences near the kink of the norm; spread the
        // outputs over several degrees instead.
        for w in &mut model.regressor.head.weight.values {
            *w *= HEAD_SCALE;
        }
        let q = 3;
        let samples: Vec<Vec<usize>> = (0..frames)
            .map(|_| (0..q).map(|_| rng.random_range(0..arch.n)).collect())
            .collect();
        let rewards: Vec<Vec<f64>> = (0..frames)
            .map(|_| (0..q).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let frames_v = ep.frames().to_vec();
        let gt = ep.gt().to_vec();
        let init = ep.init_angle();

        let sel = SelectorObjective {
            frames: frames_v.clone(),
            samples: samples.clone(),
            rewards: rewards.clone(),
            baseline: true,
        };
        let reg = RegressorObjective {
            frames: frames_v.clone(),
            gt: gt.clone(),
            init,
            indices: samples.iter().map(|s| s[0]).collect(),
            lambda,
        };
        let joint = JointObjective {
            frames: frames_v,
            gt: gt.clone(),
            init,
            samples,
            rewards,
            // The trajectory loss is hundreds of degrees while the surrogate
            // is O(T); balancing them keeps the selector's share of the
            // finite differences above float noise.
            weights: HybridWeights {
                lambda,
                supervised: 0.02,
                policy: 1.5,
                baseline: false,
            },
        };
        let pred: Vec<ViewingAngle> = gt
            .iter()
            .map(|g| ViewingAngle::new(g.azimuth() + rng.random_range(-20.0..20.0), g.elevation() + rng.random_range(-10.0..10.0)))
            .collect();
        let traj = TrajectoryObjective { gt, lambda };

        let mut push = |name: &str, report: GradCheckReport| {
            entries.push(GradCheckEntry {
                objective: name.to_string(),
                seed,
                report,
            })
        };
        push("selector", check(&mut model.clone(), sel, corrupt, tolerance)?);
        push("regressor", check(&mut model.clone(), reg, corrupt, tolerance)?);
        push("joint", check(&mut model.clone(), joint, corrupt, tolerance)?);
        push("trajectory_loss", check(&mut TrajectoryObjective::tensor(&pred), traj, corrupt, tolerance)?);
    }
    let passed = entries.iter().all(|e| e.report.passed);
    Ok(GradCheckSuite { entries, passed })
}
