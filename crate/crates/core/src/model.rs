//! The full parameter set: selector network plus regressor network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParamTensor, Parameterized};
use crate::error::{PilotError, Result};
use crate::observation::ObsDims;
use crate::regressor::RegressorNet;
use crate::selector::SelectorNet;

/// Network dimensions. Stored in checkpoints; loading rejects mismatches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub d: usize,
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub hidden_selector: usize,
    pub hidden_regressor: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            d: 16,
            k: 12,
            n: 16,
            hidden_selector: 256,
            hidden_regressor: 8,
        }
    }
}

impl Architecture {
    pub fn obs_dims(&self) -> ObsDims {
        ObsDims::new(self.d, self.k, self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.hidden_selector == 0 || self.hidden_regressor == 0 {
            return Err(PilotError::Config(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }

    pub fn check_obs(&self, dims: ObsDims) -> Result<()> {
        if dims != self.obs_dims() {
            return Err(PilotError::Config(format!(
                "data dims (d={}, k={}, N={}) do not match model (d={}, k={}, N={})",
                dims.d, dims.k, dims.n, self.d, self.k, self.n
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PilotModel {
    pub arch: Architecture,
    pub selector: SelectorNet,
    pub regressor: RegressorNet,
}

impl PilotModel {
    /// All-zero weights: uniform selection, zero steering.
    pub fn zeros(arch: Architecture) -> Self {
        PilotModel {
            arch,
            selector: SelectorNet::zeros(arch.obs_dims(), arch.hidden_selector),
            regressor: RegressorNet::zeros(arch.k, arch.hidden_regressor),
        }
    }

    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let selector = SelectorNet::init(arch.obs_dims(), arch.hidden_selector, rng);
        let regressor = RegressorNet::init(arch.k, arch.hidden_regressor, rng);
        PilotModel {
            arch,
            selector,
            regressor,
        }
    }

    /// Rebuilds a model from named tensors (as stored in a checkpoint).
    pub fn from_tensors(arch: Architecture, tensors: &[ParamTensor]) -> Result<Self> {
        let mut model = PilotModel::zeros(arch);
        let mut seen = 0;
        for slot in model.tensors_mut() {
            let src = tensors.iter().find(|t| t.name == slot.name).ok_or_else(|| {
                PilotError::Config(format!("checkpoint is missing tensor {}", slot.name))
            })?;
            if src.shape != slot.shape || src.values.len() != slot.values.len() {
                return Err(PilotError::Config(format!(
                    "tensor {} has shape {:?}, architecture needs {:?}",
                    slot.name, src.shape, slot.shape
                )));
            }
            if !src.is_finite() {
                return Err(PilotError::Numerics(format!("tensor {} is not finite", src.name)));
            }
            slot.values.copy_from_slice(&src.values);
            seen += 1;
        }
        if seen != tensors.len() {
            return Err(PilotError::Config("checkpoint has unexpected extra tensors".into()));
        }
        Ok(model)
    }
}

impl Parameterized for PilotModel {
    fn tensors(&self) -> Vec<&ParamTensor> {
        let mut v = self.selector.tensors();
        v.extend(self.regressor.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.selector.tensors_mut();
        v.extend(self.regressor.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tensor_round_trip_and_mismatch() {
        let arch = Architecture {
            d: 4,
            k: 3,
            n: 2,
            hidden_selector: 5,
            hidden_regressor: 2,
        };
        let m = PilotModel::init(arch, &mut ChaCha8Rng::seed_from_u64(0));
        let tensors: Vec<ParamTensor> = m.tensors().into_iter().cloned().collect();
        let back = PilotModel::from_tensors(arch, &tensors).unwrap();
        assert_eq!(back.tensors().len(), m.tensors().len());
        for (a, b) in back.tensors().iter().zip(m.tensors()) {
            assert_eq!(a.values, b.values);
        }
        let wider = Architecture { n: 3, ..arch };
        assert!(matches!(PilotModel::from_tensors(wider, &tensors), Err(PilotError::Config(_))));
    }
}
