//! Mini-batch training with validation snapshots and divergence stopping.

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{self, Adam};
use super::forest::Forest;
use super::nn::{Arch, Dropout, Network};
use super::tree::Features;
use super::{ModelConfig, Parameters, Snapshot, TrainedModel, MODEL_FORMAT_VERSION};
use crate::encoding::EncodingKind;
use crate::error::{Error, Result};
use crate::eval;
use crate::sampling::{DataParams, SampleSet, Scaler};
use crate::seed;

/// Samples per gradient work item. Chunk sums are reduced in index order, so
/// the result does not depend on how many threads run them.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub grace_epochs: usize,
    pub divergence_factor: f64,
    /// Global gradient-norm limit for recurrent models.
    pub clip_norm: f64,
    /// Stop after this many epochs without a new validation highpoint.
    #[serde(default)]
    pub patience: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 300,
            batch_size: 256,
            grace_epochs: 20,
            divergence_factor: 2.0,
            clip_norm: 5.0,
            patience: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 {
            return Err(Error::InvalidArgument("max_epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::InvalidArgument("divergence_factor must exceed 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument("clip_norm must be positive".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::InvalidArgument("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_mean_accuracy: f64,
    pub validation_min_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop_reason: String,
}

/// 1-based index of the first strict maximum, the epoch a snapshot is kept
/// from.
pub fn best_epoch(trace: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in trace.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

fn labels_of(set: &SampleSet, classes: &[String]) -> Result<Vec<usize>> {
    set.samples
        .iter()
        .map(|s| {
            classes
                .iter()
                .position(|c| *c == s.label)
                .ok_or_else(|| Error::InvalidArgument(format!("label `{}` is not a known class", s.label)))
        })
        .collect()
}

fn scaled(set: &SampleSet, scaler: &Scaler) -> Vec<f64> {
    let mut flat = Vec::with_capacity(set.len() * set.rows * set.width);
    for s in &set.samples {
        flat.extend_from_slice(&s.values);
    }
    scaler.transform(&mut flat);
    flat
}

/// Trains a model of `config` on `train_set`, snapshotting at the best
/// validation macro accuracy. The scaler is fitted on `train_set` alone.
#[allow(clippy::too_many_arguments)]
pub fn train(
    config: &ModelConfig,
    encoding: EncodingKind,
    data: DataParams,
    train_set: &SampleSet,
    validation: &SampleSet,
    classes: &[String],
    tcfg: &TrainConfig,
) -> Result<(TrainedModel, TrainLog)> {
    config.validate()?;
    config.check_data(&data)?;
    tcfg.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must both be non-empty".into(),
        ));
    }
    if (train_set.rows, train_set.width) != (validation.rows, validation.width) {
        return Err(Error::InvalidArgument("training and validation sample shapes differ".into()));
    }
    let classes = classes.to_vec();
    let y_train = labels_of(train_set, &classes)?;
    let y_val = labels_of(validation, &classes)?;
    let scaler = Scaler::fit(train_set)?;
    let x_train = scaled(train_set, &scaler);
    let x_val = scaled(validation, &scaler);
    let sample_len = train_set.rows * train_set.width;

    let (parameters, snapshot, log) = match config {
        ModelConfig::Rf(c) => {
            let feats = Features::new(&x_train, sample_len);
            let forest = Forest::fit(&feats, &y_train, classes.len(), c.n_estimators, c.min_samples_leaf, c.seed);
            let train_loss = x_train
                .chunks_exact(sample_len)
                .zip(&y_train)
                .map(|(x, &y)| -forest.predict_proba(x)[y].max(f64::MIN_POSITIVE).ln())
                .sum::<f64>()
                / y_train.len() as f64;
            let pred: Vec<usize> = x_val
                .par_chunks_exact(sample_len)
                .map(|x| eval::argmax(&forest.predict_proba(x)))
                .collect();
            let (mean, min) = eval::mean_min_accuracy(&y_val, &pred, classes.len());
            let rec = EpochRecord {
                epoch: 1,
                train_loss,
                validation_mean_accuracy: mean,
                validation_min_accuracy: min,
            };
            let snapshot = Snapshot {
                epoch: 1,
                train_loss,
                validation_mean_accuracy: mean,
                validation_min_accuracy: min,
            };
            let log = TrainLog {
                epochs: vec![rec],
                best_epoch: 1,
                stop_reason: "forest fitted".into(),
            };
            (Parameters::Forest(forest), snapshot, log)
        }
        ModelConfig::Mlp(_) | ModelConfig::Rnn(_) => {
            let arch = config
                .arch(train_set.width, classes.len())
                .expect("neural families have an architecture");
            let dropout = match config {
                ModelConfig::Rnn(c) if c.layers > 1 => c.dropout,
                _ => 0.0,
            };
            let clip = matches!(config, ModelConfig::Rnn(_)).then_some(tcfg.clip_norm);
            let lr = config.learning_rate().expect("neural families have a learning rate");
            let data = NetData {
                x_train: &x_train,
                y_train: &y_train,
                x_val: &x_val,
                y_val: &y_val,
                sample_len,
                classes: classes.len(),
            };
            let (flat, snapshot, log) = fit_network(&arch, config.seed(), lr, dropout, clip, &data, tcfg)?;
            (Parameters::network(arch, &flat), snapshot, log)
        }
    };

    info!(
        "{} trained: best epoch {}, validation mean accuracy {:.4}, min accuracy {:.4} ({})",
        config.family(),
        snapshot.epoch,
        snapshot.validation_mean_accuracy,
        snapshot.validation_min_accuracy,
        log.stop_reason
    );
    let model = TrainedModel {
        version: MODEL_FORMAT_VERSION,
        family: config.family(),
        config: config.clone(),
        encoding,
        data,
        classes,
        input_rows: train_set.rows,
        input_width: train_set.width,
        scaler,
        parameters,
        snapshot,
    };
    Ok((model, log))
}

/// Early-stop rule applied after each epoch's training pass: a non-finite
/// loss, or past the grace period a loss above `divergence_factor` times the
/// best loss so far. Non-finite loss in the first epoch is an error.
pub fn divergence(epoch: usize, loss: f64, best_loss: f64, tcfg: &TrainConfig) -> Result<Option<String>> {
    if !loss.is_finite() {
        if epoch == 1 {
            return Err(Error::Diverged("diverged immediately: non-finite loss in epoch 1".into()));
        }
        return Ok(Some(format!("non-finite training loss in epoch {epoch}")));
    }
    if epoch > tcfg.grace_epochs && loss > tcfg.divergence_factor * best_loss {
        return Ok(Some(format!(
            "training loss {loss:.4} exceeded {} x best {best_loss:.4} in epoch {epoch}",
            tcfg.divergence_factor
        )));
    }
    Ok(None)
}

struct NetData<'a> {
    x_train: &'a [f64],
    y_train: &'a [usize],
    x_val: &'a [f64],
    y_val: &'a [usize],
    sample_len: usize,
    classes: usize,
}

/// Mean loss and gradient over the samples `idx`.
pub fn batch_gradient(
    arch: &Arch,
    params: &[f64],
    x: &[f64],
    y: &[usize],
    sample_len: usize,
    idx: &[usize],
    dropout: Option<(f64, u64)>,
) -> (f64, Vec<f64>) {
    let net = Network::new(arch, params);
    let parts: Vec<(f64, Vec<f64>)> = idx
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            let mut rng = dropout.map(|(_, s)| seed::derived_rng(s, &format!("chunk/{c}")));
            for &i in chunk {
                let d = match (dropout, rng.as_mut()) {
                    (Some((rate, _)), Some(rng)) => Some(Dropout { rate, rng }),
                    _ => None,
                };
                loss += net.loss_and_grad(&x[i * sample_len..(i + 1) * sample_len], y[i], d, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let n = idx.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

fn fit_network(
    arch: &Arch,
    model_seed: u64,
    lr: f64,
    dropout: f64,
    clip: Option<f64>,
    d: &NetData<'_>,
    tcfg: &TrainConfig,
) -> Result<(Vec<f64>, Snapshot, TrainLog)> {
    let mut params = arch.init(seed::derive_seed(model_seed, "init"));
    let mut adam = Adam::new(params.len());
    let mut shuffle = seed::derived_rng(tcfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..d.y_train.len()).collect();

    let mut best: Option<(Vec<f64>, Snapshot)> = None;
    let mut best_loss = f64::INFINITY;
    let mut epochs = Vec::new();
    let mut stop_reason = format!("reached {} epochs", tcfg.max_epochs);

    for epoch in 1..=tcfg.max_epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let drop = (dropout > 0.0)
                .then(|| (dropout, seed::derive_seed(tcfg.seed, &format!("dropout/{epoch}/{b}"))));
            let (loss, mut grad) = batch_gradient(arch, &params, d.x_train, d.y_train, d.sample_len, batch, drop);
            loss_sum += loss * batch.len() as f64;
            if let Some(max) = clip {
                adam::clip_global_norm(&mut grad, max);
            }
            if grad.iter().all(|g| g.is_finite()) {
                adam.step(&mut params, &grad, lr);
            }
        }
        let train_loss = loss_sum / order.len() as f64;
        if let Some(reason) = divergence(epoch, train_loss, best_loss, tcfg)? {
            stop_reason = reason;
            break;
        }
        let net = Network::new(arch, &params);
        let pred: Vec<usize> = d
            .x_val
            .par_chunks_exact(d.sample_len)
            .map(|x| eval::argmax(&net.logits(x)))
            .collect();
        let (mean, min) = eval::mean_min_accuracy(d.y_val, &pred, d.classes);
        debug!("epoch {epoch}: loss {train_loss:.5}, validation mean accuracy {mean:.4}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_mean_accuracy: mean,
            validation_min_accuracy: min,
        });
        if best.as_ref().is_none_or(|(_, s)| mean > s.validation_mean_accuracy) {
            best = Some((
                params.clone(),
                Snapshot {
                    epoch,
                    train_loss,
                    validation_mean_accuracy: mean,
                    validation_min_accuracy: min,
                },
            ));
        }
        best_loss = best_loss.min(train_loss);
        let since_best = epoch - best.as_ref().map_or(epoch, |(_, s)| s.epoch);
        if tcfg.patience.is_some_and(|p| since_best >= p) {
            stop_reason = format!("no validation improvement for {since_best} epochs");
            break;
        }
    }

    let (params, snapshot) = best.expect("at least one epoch completed");
    let log = TrainLog {
        best_epoch: snapshot.epoch,
        epochs,
        stop_reason,
    };
    Ok((params, snapshot, log))
}
