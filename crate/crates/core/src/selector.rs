//! Main-object selector: a tanh RNN over the flat frame observation followed
//! by a bias-free softmax head, `S_t = softmax(W_s h_t)`.

use rand::Rng;

use crate::diffcore::{softmax, Linear, ParamTensor, Parameterized, RnnCell, RnnStep};
use crate::error::{PilotError, Result};
use crate::observation::{FrameObservation, ObsDims};

/// Positions (degrees) are divided by this before entering the network.
pub const POSITION_INPUT_SCALE: f64 = 180.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SelectorState {
    pub h: Vec<f64>,
}

impl SelectorState {
    pub fn zeros(hidden: usize) -> Self {
        SelectorState { h: vec![0.0; hidden] }
    }
}

/// Probability of each slot being the main object.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionDistribution {
    pub probs: Vec<f64>,
}

/// Everything one recorded selector step needs for backward.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorRecord {
    pub rnn: RnnStep,
    pub dist: SelectionDistribution,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectorNet {
    pub dims: ObsDims,
    pub cell: RnnCell,
    pub head: Linear,
}

impl SelectorNet {
    pub fn zeros(dims: ObsDims, hidden: usize) -> Self {
        SelectorNet {
            dims,
            cell: RnnCell::zeros("selector.rnn", dims.flat_len(), hidden),
            head: Linear::new(ParamTensor::zeros("selector.w_s", &[dims.n, hidden])),
        }
    }

    pub fn init<R: Rng + ?Sized>(dims: ObsDims, hidden: usize, rng: &mut R) -> Self {
        SelectorNet {
            dims,
            cell: RnnCell::init("selector.rnn", dims.flat_len(), hidden, rng),
            head: Linear::new(ParamTensor::uniform("selector.w_s", &[dims.n, hidden], hidden, rng)),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.cell.hidden_dim()
    }

    /// Network input for a frame: the flat observation with the position
    /// block rescaled.
    pub fn input(&self, obs: &FrameObservation) -> Result<Vec<f64>> {
        if obs.dims() != self.dims {
            return Err(PilotError::invalid(format!(
                "observation dims {:?} do not match selector dims {:?}",
                obs.dims(),
                self.dims
            )));
        }
        let mut x = obs.flat().to_vec();
        let start = self.dims.position_offset();
        for v in &mut x[start..start + 2 * self.dims.n] {
            *v /= POSITION_INPUT_SCALE;
        }
        Ok(x)
    }

    pub fn forward(
        &self,
        obs: &FrameObservation,
        state: &SelectorState,
    ) -> Result<(SelectorState, SelectionDistribution)> {
        let rec = self.forward_recorded(obs, state)?;
        Ok((SelectorState { h: rec.rnn.h }, rec.dist))
    }

    pub fn forward_recorded(
        &self,
        obs: &FrameObservation,
        state: &SelectorState,
    ) -> Result<SelectorRecord> {
        let x = self.input(obs)?;
        let rnn = self.cell.step(x, state.h.clone())?;
        let logits = self.head.forward(&rnn.h)?;
        Ok(SelectorRecord {
            rnn,
            dist: SelectionDistribution {
                probs: softmax(&logits),
            },
        })
    }

    /// BPTT over a recorded window given the loss gradient at each step's
    /// logits.
    pub fn backward(&mut self, records: &[SelectorRecord], dlogits: &[Vec<f64>]) -> Result<()> {
        if records.is_empty() {
            return Err(PilotError::State("selector backward without forward record".into()));
        }
        if dlogits.len() != records.len() {
            return Err(PilotError::invalid("one logit gradient per recorded step required"));
        }
        let mut carry = vec![0.0; self.hidden_dim()];
        for t in (0..records.len()).rev() {
            let mut dh = self.head.backward(&records[t].rnn.h, &dlogits[t]);
            for (a, b) in dh.iter_mut().zip(&carry) {
                *a += b;
            }
            let (_, dh_prev) = self.cell.backward_step(&records[t].rnn, &dh);
            carry = dh_prev;
        }
        Ok(())
    }
}

impl Parameterized for SelectorNet {
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

/// `argmax_i S(i)`, ties to the lowest index.
pub fn select_greedy(dist: &SelectionDistribution) -> usize {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > dist.probs[best] {
            best = i;
        }
    }
    best
}

/// Draws an index with probability `probs[i]`.
pub fn select_sample<R: Rng + ?Sized>(dist: &SelectionDistribution, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    // rounding left u above the cumulative sum
    last
}

/// REINFORCE gradient with respect to the logits (ascent direction):
/// `(1/Q) sum_q r_q (onehot(i_q) - S)`, using `∇_z log S(i) = onehot(i) - S`.
/// With `baseline`, rewards are centered on their mean first.
pub fn policy_gradient_contribution(
    dist: &SelectionDistribution,
    samples: &[usize],
    rewards: &[f64],
    baseline: bool,
) -> Result<Vec<f64>> {
    let n = dist.probs.len();
    if samples.is_empty() || samples.len() != rewards.len() {
        return Err(PilotError::invalid("need Q >= 1 samples with one reward each"));
    }
    if let Some(bad) = samples.iter().find(|&&i| i >= n) {
        return Err(PilotError::invalid(format!("sample index {bad} out of range (N={n})")));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(PilotError::invalid("rewards must be finite"));
    }
    let q = samples.len() as f64;
    let mean = if baseline {
        rewards.iter().sum::<f64>() / q
    } else {
        0.0
    };
    let mut g = vec![0.0; n];
    for (&i, &r) in samples.iter().zip(rewards) {
        let w = (r - mean) / q;
        if w == 0.0 {
            continue;
        }
        for (gj, pj) in g.iter_mut().zip(&dist.probs) {
            *gj -= w * pj;
        }
        g[i] += w;
    }
    Ok(g)
}
