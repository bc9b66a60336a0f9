//! The declarative run configuration read by the command-line tool.
//!
//! Every field has a default and unknown keys are rejected, so a config file
//! only needs to name what it changes. The model's input dimensions
//! (`d`, `k`, `N`) follow the scene section; only the hidden sizes are set
//! under `[model]`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PilotError, Result};
use crate::eval::DpConfig;
use crate::model::Architecture;
use crate::observation::SceneConfig;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_selector: usize,
    pub hidden_regressor: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_selector: 32,
            hidden_regressor: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_count: usize,
    pub test_count: usize,
    pub train_seed: u64,
    pub test_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_count: 50,
            test_count: 10,
            train_seed: 1000,
            test_seed: 9000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub dp: DpConfig,
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dp: DpConfig::default(),
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PilotError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PilotError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            PilotError::Config(m) => PilotError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate().map_err(|e| PilotError::Config(e.to_string()))?;
        self.train.validate()?;
        self.architecture().validate()?;
        self.eval.dp.grid()?;
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            d: self.scene.appearance_dim,
            k: self.scene.motion_bins,
            n: self.scene.slots,
            hidden_selector: self.model.hidden_selector,
            hidden_regressor: self.model.hidden_regressor,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
