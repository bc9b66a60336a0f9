//! Checkpoint files: one JSON document holding the architecture, training
//! progress, the RNG position and every parameter tensor by name.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LrSchedule, ParamTensor, Parameterized};
use crate::error::{PilotError, Result};
use crate::model::{Architecture, PilotModel};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Exact position of a `ChaCha8Rng` stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal `u128` word position.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bytes = hex::decode(&self.seed)
            .map_err(|e| PilotError::Config(format!("bad rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| PilotError::Config("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| PilotError::Config(format!("bad rng word position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: Architecture,
    /// Completed epochs.
    pub epoch: usize,
    pub lr_schedule: LrSchedule,
    pub rng: RngState,
    pub params: Vec<ParamTensor>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl Checkpoint {
    pub fn new(model: &PilotModel, epoch: usize, lr_schedule: LrSchedule, rng: &ChaCha8Rng) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            architecture: model.arch,
            epoch,
            lr_schedule,
            rng: RngState::capture(rng),
            params: model
                .tensors()
                .into_iter()
                .map(|t| ParamTensor {
                    grad: Vec::new(),
                    ..t.clone()
                })
                .collect(),
        }
    }

    pub fn model(&self) -> Result<PilotModel> {
        self.architecture.validate()?;
        PilotModel::from_tensors(self.architecture, &self.params)
    }

    /// Like [`Checkpoint::model`], but rejects a different architecture.
    pub fn model_for(&self, expected: &Architecture) -> Result<PilotModel> {
        if &self.architecture != expected {
            return Err(PilotError::Config(format!(
                "checkpoint architecture {:?} does not match {:?}",
                self.architecture, expected
            )));
        }
        self.model()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let probe: VersionProbe = serde_json::from_str(text).map_err(|e| PilotError::Parse {
            line: e.line(),
            message: format!("bad checkpoint: {e}"),
        })?;
        if probe.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(PilotError::Version {
                found: probe.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        serde_json::from_str(text).map_err(|e| PilotError::Parse {
            line: e.line(),
            message: format!("bad checkpoint: {e}"),
        })
    }

    /// Short content hash used to tag outputs produced from this checkpoint.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|e| PilotError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PilotError::io(path, e))?;
        Checkpoint::from_json(&text)
    }
}
