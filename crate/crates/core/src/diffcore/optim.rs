//! SGD and the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::error::{PilotError, Result};

/// `lr(epoch) = initial * decay^floor(epoch / period)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub period: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 1e-5,
            decay: 0.9,
            period: 50,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.period.max(1)) as i32;
        self.initial * self.decay.powi(steps)
    }

    pub fn validate(&self) -> Result<()> {
        // initial = 0 is accepted: it freezes the parameters
        if !(self.initial >= 0.0 && self.initial.is_finite()) {
            return Err(PilotError::Config(format!("learning rate {} must be >= 0", self.initial)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) || self.period == 0 {
            return Err(PilotError::Config("lr decay must be in (0, 1] and period >= 1".into()));
        }
        Ok(())
    }
}

pub fn grad_norm<M: Parameterized + ?Sized>(model: &M) -> f64 {
    model
        .tensors()
        .iter()
        .flat_map(|t| &t.grad)
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<M: Parameterized + ?Sized>(model: &mut M, max_norm: f64) -> f64 {
    let norm = grad_norm(model);
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for t in model.tensors_mut() {
            for g in &mut t.grad {
                *g *= scale;
            }
        }
    }
    norm
}

/// `p <- p - lr * g` for every parameter, then zeroes the gradients.
/// Non-finite gradients, or an update that would overflow a parameter,
/// abort the step with parameters untouched.
pub fn sgd_step<M: Parameterized + ?Sized>(model: &mut M, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(PilotError::invalid(format!("learning rate {lr} must be >= 0")));
    }
    for t in model.tensors() {
        if t.grad.iter().any(|g| !g.is_finite()) {
            return Err(PilotError::Numerics(format!("non-finite gradient in {}", t.name)));
        }
    }
    // an update that overflows is rejected before any tensor changes
    for t in model.tensors() {
        if t.grad.len() == t.values.len() && t.values.iter().zip(&t.grad).any(|(p, g)| !(p - lr * g).is_finite()) {
            return Err(PilotError::Numerics(format!("update overflows {}", t.name)));
        }
    }
    for t in model.tensors_mut() {
        if t.grad.len() == t.values.len() {
            for (p, g) in t.values.iter_mut().zip(&t.grad) {
                *p -= lr * g;
            }
        }
        t.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamTensor;

    fn one(p: f64, g: f64) -> Vec<ParamTensor> {
        let mut t = ParamTensor::zeros("p", &[1]);
        t.values[0] = p;
        t.grad[0] = g;
        vec![t]
    }

    #[test]
    fn sgd_arithmetic() {
        let mut m = one(1.0, 2.0);
        sgd_step(&mut m, 0.1).unwrap();
        assert!((m[0].values[0] - 0.8).abs() < 1e-15);
        assert_eq!(m[0].grad[0], 0.0);

        let mut m = one(1.0, 0.0);
        sgd_step(&mut m, 0.1).unwrap();
        assert_eq!(m[0].values[0], 1.0);
    }

    #[test]
    fn sgd_rejects_non_finite_gradient() {
        let mut m = one(1.0, f64::NAN);
        assert!(matches!(sgd_step(&mut m, 0.1), Err(PilotError::Numerics(_))));
        assert_eq!(m[0].values[0], 1.0);
    }

    #[test]
    fn sgd_rejects_overflowing_update() {
        let mut m = one(1.0, 1e10);
        assert!(matches!(sgd_step(&mut m, 1e300), Err(PilotError::Numerics(_))));
        assert_eq!(m[0].values[0], 1.0);
    }

    #[test]
    fn schedule_decays_every_period() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0), 1e-5);
        assert_eq!(s.lr(49), 1e-5);
        assert!((s.lr(50) - 9e-6).abs() < 1e-18);
        assert!((s.lr(100) - 8.1e-6).abs() < 1e-18);
        for e in 0..500 {
            assert!(s.lr(e + 1) <= s.lr(e));
            assert!(s.lr(e) > 0.0);
        }
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut m = one(0.0, 10.0);
        let before = clip_grad_norm(&mut m, 5.0);
        assert_eq!(before, 10.0);
        assert!((grad_norm(&m) - 5.0).abs() < 1e-12);
    }
}
