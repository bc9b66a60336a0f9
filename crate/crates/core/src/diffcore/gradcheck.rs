//! Central finite-difference gradient checking.

use std::fmt;

use serde::Serialize;

use super::Parameterized;
use crate::error::{PilotError, Result};

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// A scalar objective over a parameterized model.
pub trait Objective<M: ?Sized> {
    fn loss(&self, model: &M) -> Result<f64>;

    /// Accumulates the analytic gradient of [`Objective::loss`] into the
    /// model's gradient buffers (the caller zeroes them) and returns the loss.
    fn gradient(&self, model: &mut M) -> Result<f64>;
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(move |t| !(t.max_rel_error < self.tolerance))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            let mark = if t.max_rel_error < self.tolerance { "ok  " } else { "FAIL" };
            writeln!(
                f,
                "{mark} {:<24} max rel err {:.3e} at [{}] (analytic {:.6e}, numeric {:.6e})",
                t.name, t.max_rel_error, t.worst_index, t.analytic, t.numeric
            )?;
        }
        write!(
            f,
            "{} at tolerance {:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares analytic gradients with central differences of step `step`.
/// Passes iff every tensor's max relative error is below `tolerance`.
pub fn gradient_check<M, O>(
    model: &mut M,
    objective: &O,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    M: Parameterized + ?Sized,
    O: Objective<M> + ?Sized,
{
    model.zero_grad();
    let base = objective.gradient(model)?;
    if !base.is_finite() {
        return Err(PilotError::Numerics(format!("non-finite loss {base}")));
    }
    let analytic: Vec<Vec<f64>> = model.tensors().iter().map(|t| t.grad.clone()).collect();

    let mut tensors = Vec::with_capacity(analytic.len());
    for (ti, grads) in analytic.iter().enumerate() {
        let mut worst = TensorCheck {
            name: model.tensors()[ti].name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for (i, &a) in grads.iter().enumerate() {
            let orig = model.tensors()[ti].values[i];
            model.tensors_mut()[ti].values[i] = orig + step;
            let plus = objective.loss(model);
            model.tensors_mut()[ti].values[i] = orig - step;
            let minus = objective.loss(model);
            model.tensors_mut()[ti].values[i] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(PilotError::Numerics(format!(
                    "non-finite loss while perturbing {}[{i}]",
                    worst.name
                )));
            }
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error || err.is_nan() {
                worst.max_rel_error = err;
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        tensors.push(worst);
    }
    model.zero_grad();
    let passed = tensors.iter().all(|t| t.max_rel_error < tolerance);
    Ok(GradCheckReport {
        tolerance,
        tensors,
        passed,
    })
}

/// Test fixture: wraps an objective and corrupts the analytic gradient of one
/// named tensor, so gradient checks must fail on it.
pub struct CorruptGradient<O> {
    pub inner: O,
    pub tensor: String,
}

impl<M, O> Objective<M> for CorruptGradient<O>
where
    M: Parameterized + ?Sized,
    O: Objective<M>,
{
    fn loss(&self, model: &M) -> Result<f64> {
        self.inner.loss(model)
    }

    fn gradient(&self, model: &mut M) -> Result<f64> {
        let loss = self.inner.gradient(model)?;
        for t in model.tensors_mut() {
            if t.name == self.tensor {
                for g in &mut t.grad {
                    *g = *g * 1.5 + 0.01;
                }
            }
        }
        Ok(loss)
    }
}
