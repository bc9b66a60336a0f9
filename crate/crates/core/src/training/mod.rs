//! Joint training: the distance reward, per-frame REINFORCE for the
//! selector, the supervised trajectory loss for the regressor, and the epoch
//! loop with checkpoints and a metrics log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{clip_grad_norm, sgd_step, Checkpoint, LrSchedule, Parameterized};
use crate::error::{PilotError, Result};
use crate::geometry::{angular_distance, ViewingAngle};
use crate::model::{Architecture, PilotModel};
use crate::observation::Episode;
use crate::regressor::{LossBreakdown, DEFAULT_LAMBDA};
use crate::selector::select_sample;

mod objectives;
mod rollout;

pub use objectives::{
    run_gradchecks, GradCheckEntry, GradCheckSuite, JointObjective, RegressorObjective, SelectorObjective,
    TrajectoryObjective, GRADCHECK_STEP, TRAJECTORY_TENSOR,
};
pub use rollout::{
    backward_hybrid, candidate_reward, regress_step, regressor_chain_backward, rollout, HybridWeights,
    RegressStep, Rollout, RolloutStep,
};

/// Center-to-corner distance of the default NFoV, in degrees.
pub const DEFAULT_ETA: f64 = 40.9;

/// `1 - dist/eta` within `eta` of the ground truth, `-1` beyond it.
pub fn reward(pred: ViewingAngle, gt: ViewingAngle, eta: f64) -> f64 {
    let dist = angular_distance(pred, gt);
    if dist <= eta {
        1.0 - dist / eta
    } else {
        -1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seq_len: usize,
    pub lambda: f64,
    pub lr: LrSchedule,
    /// Selections sampled per frame (`Q`).
    pub samples: usize,
    pub eta: f64,
    pub seed: u64,
    /// Center each frame's rewards on their mean before the policy gradient.
    pub baseline: bool,
    /// Gradient-norm clip applied to each network; `0` disables clipping.
    pub grad_clip: f64,
    /// Relative weights of the policy and supervised gradients.
    pub pg_weight: f64,
    pub supervised_weight: f64,
    /// Write a checkpoint every this many epochs (the final epoch is always
    /// written).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 10,
            max_epochs: 400,
            seq_len: 50,
            lambda: DEFAULT_LAMBDA,
            lr: LrSchedule::default(),
            samples: 1,
            eta: DEFAULT_ETA,
            seed: 0,
            baseline: false,
            grad_clip: 5.0,
            pg_weight: 1.0,
            supervised_weight: 1.0,
            checkpoint_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(PilotError::Config(m));
        if self.batch_size == 0 || self.samples == 0 || self.checkpoint_every == 0 {
            return cfg("batch_size, samples and checkpoint_every must be positive".into());
        }
        if self.seq_len < 2 {
            return cfg(format!("seq_len {} must be at least 2", self.seq_len));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return cfg(format!("eta {} must be positive", self.eta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return cfg(format!("lambda {} must be >= 0", self.lambda));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return cfg(format!("grad_clip {} must be >= 0 (0 disables)", self.grad_clip));
        }
        for (name, w) in [("pg_weight", self.pg_weight), ("supervised_weight", self.supervised_weight)] {
            if !(w >= 0.0 && w.is_finite()) {
                return cfg(format!("{name} {w} must be >= 0"));
            }
        }
        self.lr.validate()
    }

    pub fn weights(&self) -> HybridWeights {
        HybridWeights {
            lambda: self.lambda,
            supervised: self.supervised_weight,
            policy: self.pg_weight,
            baseline: self.baseline,
        }
    }
}

/// Diagnostics of one optimization step, averaged over the batch's windows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct StepReport {
    pub loss: LossBreakdown,
    pub mean_reward: f64,
    pub windows: usize,
    pub grad_norm: f64,
}

fn check_finite(model: &PilotModel) -> bool {
    model.tensors().iter().all(|t| t.grad.iter().all(|g| g.is_finite()))
}

/// One hybrid update over a batch of windows. Each window starts from zero
/// recurrent state at its first ground-truth angle.
///
/// On non-finite losses or gradients the step is aborted with
/// [`PilotError::Numerics`] and the parameters are left untouched.
pub fn train_step(
    model: &mut PilotModel,
    batch: &[Episode],
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(PilotError::invalid("empty training batch"));
    }
    if let Some(w) = batch.iter().find(|w| w.len() > cfg.seq_len) {
        return Err(PilotError::invalid(format!("window of {} frames exceeds seq_len {}", w.len(), cfg.seq_len)));
    }
    model.zero_grad();
    let weights = cfg.weights();
    let mut sum = LossBreakdown::new(0.0, 0.0, cfg.lambda);
    let mut reward_sum = 0.0;
    for window in batch {
        model.arch.check_obs(window.dims())?;
        let roll = rollout(model, window.frames(), window.gt(), window.init_angle(), cfg.eta, |_, dist| {
            (0..cfg.samples).map(|_| select_sample(dist, rng)).collect()
        })?;
        let loss = backward_hybrid(model, &roll, window.gt(), weights)?;
        sum = LossBreakdown::new(sum.regression + loss.regression, sum.smoothness + loss.smoothness, cfg.lambda);
        reward_sum += roll.mean_reward();
    }
    let n = batch.len() as f64;
    let loss = LossBreakdown::new(sum.regression / n, sum.smoothness / n, cfg.lambda);
    if !loss.total.is_finite() || !reward_sum.is_finite() || !check_finite(model) {
        model.zero_grad();
        return Err(PilotError::Numerics("non-finite loss or gradient; step aborted".into()));
    }
    for t in model.tensors_mut() {
        for g in &mut t.grad {
            *g /= n;
        }
    }
    // The two networks are clipped separately: the regression gradient is
    // orders of magnitude larger than the policy gradient and would
    // otherwise scale the selector's update to nothing.
    let grad_norm = crate::diffcore::grad_norm(model);
    if cfg.grad_clip > 0.0 {
        clip_grad_norm(&mut model.selector, cfg.grad_clip);
        clip_grad_norm(&mut model.regressor, cfg.grad_clip);
    }
    if let Err(e) = sgd_step(model, lr) {
        model.zero_grad();
        return Err(e);
    }
    Ok(StepReport {
        loss,
        mean_reward: reward_sum / n,
        windows: batch.len(),
        grad_norm,
    })
}

/// One metrics-log record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub regression: f64,
    pub smoothness: f64,
    pub total: f64,
    pub mean_reward: f64,
}

/// Where `train` writes its artifacts.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_{epoch:05}.json"))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }

    /// Highest-epoch checkpoint in the directory, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<PathBuf>> {
        let entries = match fs::read_dir(&self.dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(PilotError::io(&self.dir, e)),
        };
        let mut best: Option<(usize, PathBuf)> = None;
        for entry in entries {
            let path = entry.map_err(|e| PilotError::io(&self.dir, e))?.path();
            let epoch = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_prefix("checkpoint_"))
                .and_then(|n| n.strip_suffix(".json"))
                .and_then(|n| n.parse::<usize>().ok());
            if let Some(e) = epoch {
                if best.as_ref().is_none_or(|(b, _)| e > *b) {
                    best = Some((e, path));
                }
            }
        }
        Ok(best.map(|(_, p)| p))
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: PilotModel,
    pub metrics: Vec<EpochMetrics>,
    pub checkpoints: Vec<PathBuf>,
    /// Final state, suitable for resuming.
    pub last: Checkpoint,
}

/// Runs epochs `start..max_epochs` (`start` is 0, or the epoch stored in
/// `resume`). Windows are reshuffled every epoch with the run's single
/// seeded generator, whose state travels with each checkpoint so a resumed
/// run reproduces an uninterrupted one bit for bit.
pub fn train(
    episodes: &[Episode],
    arch: Architecture,
    cfg: &TrainConfig,
    output: Option<&TrainOutput>,
    resume: Option<&Checkpoint>,
) -> Result<TrainResult> {
    cfg.validate()?;
    arch.validate()?;
    if episodes.is_empty() {
        return Err(PilotError::invalid("training set is empty"));
    }
    let mut windows = Vec::new();
    for ep in episodes {
        arch.check_obs(ep.dims())?;
        windows.extend(ep.windows(cfg.seq_len)?);
    }

    let (mut model, mut rng, start) = match resume {
        Some(ck) => (ck.model_for(&arch)?, ck.rng.restore()?, ck.epoch),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let model = PilotModel::init(arch, &mut rng);
            (model, rng, 0)
        }
    };

    let mut checkpoints = Vec::new();
    let mut metrics_out = None;
    if let Some(out) = output {
        fs::create_dir_all(&out.dir).map_err(|e| PilotError::io(&out.dir, e))?;
        let mpath = out.metrics_path();
        let file = if resume.is_some() {
            OpenOptions::new().create(true).append(true).open(&mpath)
        } else {
            File::create(&mpath)
        }
        .map_err(|e| PilotError::io(&mpath, e))?;
        metrics_out = Some((BufWriter::new(file), mpath));
        if resume.is_none() {
            let path = out.checkpoint_path(0);
            Checkpoint::new(&model, 0, cfg.lr, &rng).save(&path)?;
            checkpoints.push(path);
        }
    }

    let mut metrics = Vec::new();
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for epoch in start..cfg.max_epochs {
        let lr = cfg.lr.lr(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let (mut reg, mut smooth, mut rew, mut count) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Episode> = chunk.iter().map(|&i| windows[i].clone()).collect();
            let rep = train_step(&mut model, &batch, cfg, lr, &mut rng)?;
            let w = rep.windows as f64;
            reg += rep.loss.regression * w;
            smooth += rep.loss.smoothness * w;
            rew += rep.mean_reward * w;
            count += rep.windows;
        }
        let c = count.max(1) as f64;
        let loss = LossBreakdown::new(reg / c, smooth / c, cfg.lambda);
        let m = EpochMetrics {
            epoch: epoch + 1,
            lr,
            regression: loss.regression,
            smoothness: loss.smoothness,
            total: loss.total,
            mean_reward: rew / c,
        };
        metrics.push(m);
        if let Some((w, path)) = metrics_out.as_mut() {
            let line = serde_json::to_string(&m).expect("metrics serialize");
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| PilotError::io(path.as_path(), e))?;
        }
        if let Some(out) = output {
            let done = epoch + 1;
            if done % cfg.checkpoint_every == 0 || done == cfg.max_epochs {
                let path = out.checkpoint_path(done);
                Checkpoint::new(&model, done, cfg.lr, &rng).save(&path)?;
                checkpoints.push(path);
            }
        }
    }

    let last = Checkpoint::new(&model, start.max(cfg.max_epochs), cfg.lr, &rng);
    Ok(TrainResult {
        model,
        metrics,
        checkpoints,
        last,
    })
}

/// Loads a metrics log written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| PilotError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PilotError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
