use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use xrid_core::models::{Family, ModelConfig, TrainConfig};
use xrid_core::pipeline::RunSpec;
use xrid_core::seed::derive_seed;
use xrid_core::{DataParams, EncodingKind};

pub const CONFIG_VERSION: u32 = 1;

/// Vote-curve settings used by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    /// Longest voted sequence in seconds.
    pub max_seconds: f64,
    /// Distance between sequence placements in seconds.
    pub stride_seconds: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            max_seconds: 60.0,
            stride_seconds: 1.0,
        }
    }
}

/// Everything `train` needs. Sub-seeds of the model and the training loop
/// are derived from `seed`, overriding the seeds stored in `model` and
/// `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub encoding: EncodingKind,
    pub data: DataParams,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub train_stride: Option<usize>,
    #[serde(default)]
    pub eval: EvalParams,
}

impl RunConfig {
    /// Defaults for a family: BR features, one-second samples.
    pub fn for_family(family: Family) -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            seed: 0,
            encoding: EncodingKind::Br,
            data: if family.is_recurrent() {
                DataParams::WINDOWED_ONE_SECOND
            } else {
                DataParams::BINNED_ONE_SECOND
            },
            model: ModelConfig::default_for(family),
            train: TrainConfig::default(),
            train_stride: None,
            eval: EvalParams::default(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("{}: not valid JSON", path.display()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CONFIG_VERSION as u64 => {}
            Some(v) => bail!("{}: config version {v} is not supported (expected {CONFIG_VERSION})", path.display()),
            None => bail!("{}: config has no `version` field", path.display()),
        }
        serde_json::from_value(value).with_context(|| format!("{}: invalid config", path.display()))
    }

    /// The spec handed to training, with seeds derived from the global seed.
    pub fn spec(&self) -> RunSpec {
        let mut model = self.model.clone();
        model.set_seed(derive_seed(self.seed, "model"));
        let mut train = self.train.clone();
        train.seed = derive_seed(self.seed, "train");
        RunSpec {
            encoding: self.encoding,
            data: self.data,
            model,
            train,
            train_stride: self.train_stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!("config version {} is not supported (expected {CONFIG_VERSION})", self.version);
        }
        if !(self.eval.max_seconds > 0.0 && self.eval.stride_seconds > 0.0) {
            bail!("eval max_seconds and stride_seconds must be positive");
        }
        self.spec().validate()?;
        Ok(())
    }
}
