//! Classifier families, their configurations and the serialized model
//! container.

pub mod adam;
pub mod forest;
pub mod nn;
pub mod train;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::EncodingKind;
use crate::error::{Error, Result};
use crate::io;
use crate::sampling::{DataParams, Scaler};

use forest::Forest;
use nn::{Arch, Cell, Network};

pub use train::{train, EpochRecord, TrainConfig, TrainLog};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Rf,
    Mlp,
    Frnn,
    Lstm,
    Gru,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Rf, Family::Mlp, Family::Frnn, Family::Lstm, Family::Gru];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Rf => "rf",
            Family::Mlp => "mlp",
            Family::Frnn => "frnn",
            Family::Lstm => "lstm",
            Family::Gru => "gru",
        }
    }

    /// Recurrent families consume windows, the others binned statistics.
    pub fn is_recurrent(self) -> bool {
        self.cell().is_some()
    }

    pub fn cell(self) -> Option<Cell> {
        match self {
            Family::Frnn => Some(Cell::Frnn),
            Family::Lstm => Some(Cell::Lstm),
            Family::Gru => Some(Cell::Gru),
            Family::Rf | Family::Mlp => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model family `{s}` (rf, mlp, frnn, lstm, gru)")))
    }
}

fn check_range<T: PartialOrd + fmt::Display + Copy>(name: &str, v: T, lo: T, hi: T) -> Result<()> {
    if v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} {v} outside [{lo}, {hi}]")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub n_estimators: usize,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl RfConfig {
    pub const N_ESTIMATORS: (usize, usize) = (50, 1000);
    pub const MIN_SAMPLES_LEAF: (usize, usize) = (1, 1000);

    pub fn validate(&self) -> Result<()> {
        check_range("n_estimators", self.n_estimators, Self::N_ESTIMATORS.0, Self::N_ESTIMATORS.1)?;
        check_range(
            "min_samples_leaf",
            self.min_samples_leaf,
            Self::MIN_SAMPLES_LEAF.0,
            Self::MIN_SAMPLES_LEAF.1,
        )
    }
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_estimators: 100,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub layers: usize,
    pub layer_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl MlpConfig {
    pub const LAYERS: (usize, usize) = (1, 6);
    pub const LAYER_SIZE: (usize, usize) = (10, 300);
    pub const LEARNING_RATE: (f64, f64) = (1e-5, 1e-2);

    pub fn validate(&self) -> Result<()> {
        check_range("layers", self.layers, Self::LAYERS.0, Self::LAYERS.1)?;
        check_range("layer_size", self.layer_size, Self::LAYER_SIZE.0, Self::LAYER_SIZE.1)?;
        check_range(
            "learning_rate",
            self.learning_rate,
            Self::LEARNING_RATE.0,
            Self::LEARNING_RATE.1,
        )
    }
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            layers: 2,
            layer_size: 100,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnConfig {
    pub cell: Cell,
    pub hidden_size: usize,
    pub layers: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl RnnConfig {
    pub const HIDDEN_SIZE: (usize, usize) = (20, 200);
    pub const LAYERS: (usize, usize) = (1, 8);
    pub const DROPOUT: (f64, f64) = (0.0, 0.6);
    pub const LEARNING_RATE: (f64, f64) = (1e-4, 1e-2);

    pub fn new(cell: Cell) -> Self {
        RnnConfig {
            cell,
            hidden_size: 50,
            layers: 2,
            dropout: 0.0,
            learning_rate: 3e-3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("hidden_size", self.hidden_size, Self::HIDDEN_SIZE.0, Self::HIDDEN_SIZE.1)?;
        check_range("layers", self.layers, Self::LAYERS.0, Self::LAYERS.1)?;
        check_range("dropout", self.dropout, Self::DROPOUT.0, Self::DROPOUT.1)?;
        check_range(
            "learning_rate",
            self.learning_rate,
            Self::LEARNING_RATE.0,
            Self::LEARNING_RATE.1,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Rf(RfConfig),
    Mlp(MlpConfig),
    Rnn(RnnConfig),
}

impl ModelConfig {
    /// Default configuration of a family.
    pub fn default_for(family: Family) -> Self {
        match family.cell() {
            Some(cell) => ModelConfig::Rnn(RnnConfig::new(cell)),
            None if family == Family::Rf => ModelConfig::Rf(RfConfig::default()),
            None => ModelConfig::Mlp(MlpConfig::default()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ModelConfig::Rf(_) => Family::Rf,
            ModelConfig::Mlp(_) => Family::Mlp,
            ModelConfig::Rnn(c) => match c.cell {
                Cell::Frnn => Family::Frnn,
                Cell::Lstm => Family::Lstm,
                Cell::Gru => Family::Gru,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Rf(c) => c.validate(),
            ModelConfig::Mlp(c) => c.validate(),
            ModelConfig::Rnn(c) => c.validate(),
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ModelConfig::Rf(c) => c.seed,
            ModelConfig::Mlp(c) => c.seed,
            ModelConfig::Rnn(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ModelConfig::Rf(c) => c.seed = seed,
            ModelConfig::Mlp(c) => c.seed = seed,
            ModelConfig::Rnn(c) => c.seed = seed,
        }
    }

    pub fn learning_rate(&self) -> Option<f64> {
        match self {
            ModelConfig::Rf(_) => None,
            ModelConfig::Mlp(c) => Some(c.learning_rate),
            ModelConfig::Rnn(c) => Some(c.learning_rate),
        }
    }

    /// Network architecture for `(rows, width)` inputs and `classes` outputs.
    pub fn arch(&self, input_width: usize, classes: usize) -> Option<Arch> {
        match self {
            ModelConfig::Rf(_) => None,
            ModelConfig::Mlp(c) => Some(Arch::Mlp {
                input: input_width,
                layers: c.layers,
                size: c.layer_size,
                classes,
            }),
            ModelConfig::Rnn(c) => Some(Arch::Rnn {
                cell: c.cell,
                input: input_width,
                hidden: c.hidden_size,
                layers: c.layers,
                classes,
            }),
        }
    }

    /// Checks that the family can consume samples under `data`.
    pub fn check_data(&self, data: &DataParams) -> Result<()> {
        let family = self.family();
        if family.is_recurrent() != data.is_windowed() {
            let want = if family.is_recurrent() { "windowed" } else { "binned" };
            return Err(Error::InvalidArgument(format!("{family} models need {want} samples")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Parameters {
    Forest(Forest),
    Network { arch: Arch, tensors: Vec<Tensor> },
}

impl Parameters {
    pub fn network(arch: Arch, flat: &[f64]) -> Self {
        let tensors = arch
            .layout()
            .into_iter()
            .map(|s| Tensor {
                values: flat[s.range()].to_vec(),
                name: s.name,
                shape: s.shape,
            })
            .collect();
        Parameters::Network { arch, tensors }
    }

    /// Flat parameter vector of a network, checked against its layout.
    pub fn flat(&self) -> Result<Option<(&Arch, Vec<f64>)>> {
        let Parameters::Network { arch, tensors } = self else {
            return Ok(None);
        };
        let layout = arch.layout();
        if layout.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        let mut flat = Vec::with_capacity(arch.param_count());
        for (spec, t) in layout.iter().zip(tensors) {
            if spec.name != t.name || spec.shape != t.shape || t.values.len() != spec.len() {
                return Err(Error::Format(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    t.name, t.shape, spec.name, spec.shape
                )));
            }
            flat.extend_from_slice(&t.values);
        }
        Ok(Some((arch, flat)))
    }
}

/// Validation metrics at the epoch whose parameters were kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_mean_accuracy: f64,
    pub validation_min_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub family: Family,
    pub config: ModelConfig,
    pub encoding: EncodingKind,
    pub data: DataParams,
    /// Class labels; index `i` is output `i`.
    pub classes: Vec<String>,
    pub input_rows: usize,
    pub input_width: usize,
    pub scaler: Scaler,
    pub parameters: Parameters,
    pub snapshot: Snapshot,
}

/// A model ready for inference.
pub struct Predictor<'m> {
    model: &'m TrainedModel,
    flat: Option<(&'m Arch, Vec<f64>)>,
}

impl TrainedModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn predictor(&self) -> Result<Predictor<'_>> {
        Ok(Predictor {
            model: self,
            flat: self.parameters.flat()?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        io::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: TrainedModel = io::read_json(path)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                model.version
            )));
        }
        model.parameters.flat()?;
        Ok(model)
    }
}

impl Predictor<'_> {
    /// Class distribution for one unscaled sample.
    pub fn predict_proba(&self, sample: &[f64]) -> Result<Vec<f64>> {
        let m = self.model;
        if sample.len() != m.input_rows * m.input_width {
            return Err(Error::InvalidArgument(format!(
                "sample has {} values, model expects {} x {}",
                sample.len(),
                m.input_rows,
                m.input_width
            )));
        }
        let mut x = sample.to_vec();
        m.scaler.transform(&mut x);
        Ok(match (&m.parameters, &self.flat) {
            (Parameters::Forest(f), _) => f.predict_proba(&x),
            (_, Some((arch, flat))) => Network::new(arch, flat).predict_proba(&x),
            _ => unreachable!("network parameters are checked on construction"),
        })
    }

    pub fn predict(&self, sample: &[f64]) -> Result<usize> {
        Ok(crate::eval::argmax(&self.predict_proba(sample)?))
    }

    /// Predicted class index of every sample, in order.
    pub fn predict_many(&self, samples: &[&[f64]]) -> Result<Vec<usize>> {
        samples.par_iter().map(|s| self.predict(s)).collect()
    }
}
