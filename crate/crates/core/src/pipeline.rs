//! Glue from a manifest and split to trained and evaluated models.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, Role, TakeRef};
use crate::encoding::{EncoderConfig, EncodingKind};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, VoteCurve};
use crate::geometry::Take;
use crate::io::{self, Manifest};
use crate::models::{self, ModelConfig, TrainConfig, TrainLog, TrainedModel};
use crate::sampling::{self, DataParams, SampleSet};

/// Takes of one split, loaded into memory.
#[derive(Debug, Clone, Default)]
pub struct SplitTakes {
    pub classes: Vec<String>,
    pub train: Vec<Take>,
    pub validation: Vec<Take>,
    pub test: Vec<Take>,
}

impl SplitTakes {
    pub fn role(&self, role: Role) -> &[Take] {
        match role {
            Role::Train => &self.train,
            Role::Validation => &self.validation,
            Role::Test => &self.test,
        }
    }

    /// Assigns in-memory takes to roles by id.
    pub fn from_takes(split: &DatasetSplit, takes: &[Take]) -> Result<Self> {
        let pick = |refs: &[TakeRef]| {
            refs.iter()
                .map(|r| {
                    takes
                        .iter()
                        .find(|t| t.subject_id == r.subject_id && t.take_id == r.take_id)
                        .cloned()
                        .ok_or_else(|| Error::Format(format!("take {}/{} not found", r.subject_id, r.take_id)))
                })
                .collect::<Result<Vec<_>>>()
        };
        Ok(SplitTakes {
            classes: split.subjects(),
            train: pick(&split.train)?,
            validation: pick(&split.validation)?,
            test: pick(&split.test)?,
        })
    }
}

pub fn load_takes(manifest: &Manifest, base: &Path, refs: &[TakeRef]) -> Result<Vec<Take>> {
    refs.par_iter()
        .map(|r| {
            let entry = manifest
                .take(&r.subject_id, &r.take_id)
                .ok_or_else(|| Error::Format(format!("take {}/{} is not in the manifest", r.subject_id, r.take_id)))?;
            let mut take = io::read_take(&io::resolve(base, &entry.path))?;
            take.subject_id = r.subject_id.clone();
            Ok(take)
        })
        .collect()
}

/// Loads every take of a split; `base` is the manifest's directory.
pub fn load_split(manifest: &Manifest, base: &Path, split: &DatasetSplit) -> Result<SplitTakes> {
    Ok(SplitTakes {
        classes: split.subjects(),
        train: load_takes(manifest, base, &split.train)?,
        validation: load_takes(manifest, base, &split.validation)?,
        test: load_takes(manifest, base, &split.test)?,
    })
}

/// Samples of every take, cut every `stride` rows of the prepared sequence
/// (non-overlapping when `stride` is `None`).
pub fn build_samples(
    takes: &[Take],
    kind: EncodingKind,
    data: &DataParams,
    enc: &EncoderConfig,
    stride: Option<usize>,
) -> Result<SampleSet> {
    data.validate()?;
    let stride = stride.unwrap_or(data.frames_per_sample());
    let (rows, width) = data.sample_shape(kind);
    let per_take: Vec<Vec<sampling::Sample>> = takes
        .par_iter()
        .map(|t| {
            let seq = sampling::prepare_sequence(t, kind, data, enc)?;
            sampling::samples_from_sequence(&seq, data, stride)
        })
        .collect::<Result<_>>()?;
    let mut set = SampleSet::new(rows, width);
    for s in per_take {
        set.extend(s);
    }
    Ok(set)
}

/// Everything needed to train one model on a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub encoding: EncodingKind,
    pub data: DataParams,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Rows between training samples; defaults to non-overlapping samples.
    #[serde(default)]
    pub train_stride: Option<usize>,
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.model.check_data(&self.data)?;
        self.train.validate()?;
        if self.train_stride == Some(0) {
            return Err(Error::InvalidArgument("train_stride must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn train_on_split(spec: &RunSpec, takes: &SplitTakes, enc: &EncoderConfig) -> Result<(TrainedModel, TrainLog)> {
    spec.validate()?;
    let train_set = build_samples(&takes.train, spec.encoding, &spec.data, enc, spec.train_stride)?;
    let validation = build_samples(&takes.validation, spec.encoding, &spec.data, enc, None)?;
    models::train(
        &spec.model,
        spec.encoding,
        spec.data,
        &train_set,
        &validation,
        &takes.classes,
        &spec.train,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: EvalReport,
    pub curve: VoteCurve,
}

/// Per-sample report and vote curve on `test` takes, optionally shifted by
/// `offset = (dx, dz)` first.
pub fn evaluate(
    model: &TrainedModel,
    test: &[Take],
    enc: &EncoderConfig,
    lengths: &[f64],
    stride_seconds: f64,
    offset: Option<(f64, f64)>,
) -> Result<Evaluation> {
    let shifted: Vec<Take>;
    let test = match offset {
        Some((dx, dz)) => {
            shifted = test.iter().map(|t| eval::sr_offset(t, dx, dz)).collect();
            &shifted
        }
        None => test,
    };
    let samples = build_samples(test, model.encoding, &model.data, enc, None)?;
    let report = eval::score_samples(model, &samples)?;
    let curve = eval::vote_curve(model, test, lengths, stride_seconds, enc)?;
    Ok(Evaluation { report, curve })
}

/// Stage objective for the search: validation MinAcc of a model trained
/// under `config` and `data`.
pub fn search_objective<'a>(
    takes: &'a SplitTakes,
    encoding: EncodingKind,
    train: &'a TrainConfig,
    enc: &'a EncoderConfig,
) -> impl FnMut(&ModelConfig, &DataParams) -> Result<f64> + 'a {
    move |config, data| {
        let spec = RunSpec {
            encoding,
            data: *data,
            model: config.clone(),
            train: train.clone(),
            train_stride: None,
        };
        let (model, _) = train_on_split(&spec, takes, enc)?;
        Ok(model.snapshot.validation_min_accuracy)
    }
}
