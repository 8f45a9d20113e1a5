//! Per-subject accuracy, majority voting over sequences and the
//! scene-offset probe.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::EncoderConfig;
use crate::error::{Error, Result};
use crate::geometry::{Take, Vec3};
use crate::io;
use crate::models::TrainedModel;
use crate::sampling::{self, SampleSet};
use crate::seed;

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Macro-averaged and minimum per-class accuracy. Classes without samples
/// are left out of both; with no samples at all both are 0.
pub fn mean_min_accuracy(truth: &[usize], pred: &[usize], n_classes: usize) -> (f64, f64) {
    let mut hit = vec![0usize; n_classes];
    let mut n = vec![0usize; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        n[t] += 1;
        hit[t] += usize::from(t == p);
    }
    let accs: Vec<f64> = n
        .iter()
        .zip(&hit)
        .filter(|(&n, _)| n > 0)
        .map(|(&n, &h)| h as f64 / n as f64)
        .collect();
    if accs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let min = accs.iter().copied().fold(f64::INFINITY, f64::min);
    (mean, min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub per_subject_accuracy: BTreeMap<String, f64>,
    pub n_samples: BTreeMap<String, usize>,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Subjects without test samples, left out of the averages.
    pub excluded: Vec<String>,
}

impl EvalReport {
    pub fn from_predictions(classes: &[String], truth: &[usize], pred: &[usize]) -> Self {
        let s = classes.len();
        let mut confusion = vec![vec![0usize; s]; s];
        for (&t, &p) in truth.iter().zip(pred) {
            confusion[t][p] += 1;
        }
        let mut per_subject_accuracy = BTreeMap::new();
        let mut n_samples = BTreeMap::new();
        let mut excluded = Vec::new();
        for (i, name) in classes.iter().enumerate() {
            let n: usize = confusion[i].iter().sum();
            n_samples.insert(name.clone(), n);
            if n == 0 {
                excluded.push(name.clone());
            } else {
                per_subject_accuracy.insert(name.clone(), confusion[i][i] as f64 / n as f64);
            }
        }
        if !excluded.is_empty() {
            warn!("subjects without samples excluded from accuracy: {}", excluded.join(", "));
        }
        let (mean_accuracy, min_accuracy) = mean_min_accuracy(truth, pred, s);
        EvalReport {
            classes: classes.to_vec(),
            per_subject_accuracy,
            n_samples,
            mean_accuracy,
            min_accuracy,
            confusion,
            excluded,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

fn class_indices(model: &TrainedModel, labels: impl Iterator<Item = impl AsRef<str>>) -> Result<Vec<usize>> {
    labels
        .map(|l| {
            let l = l.as_ref();
            model
                .class_index(l)
                .ok_or_else(|| Error::InvalidArgument(format!("subject `{l}` is not a class of the model")))
        })
        .collect()
}

/// Predicted class index of every sample.
pub fn predict_samples(model: &TrainedModel, samples: &SampleSet) -> Result<Vec<usize>> {
    let p = model.predictor()?;
    let refs: Vec<&[f64]> = samples.samples.iter().map(|s| s.values.as_slice()).collect();
    p.predict_many(&refs)
}

pub fn score_samples(model: &TrainedModel, samples: &SampleSet) -> Result<EvalReport> {
    let truth = class_indices(model, samples.samples.iter().map(|s| &s.label))?;
    let pred = predict_samples(model, samples)?;
    Ok(EvalReport::from_predictions(&model.classes, &truth, &pred))
}

/// Modal class; ties go to the smallest class index.
pub fn majority_vote(predictions: &[usize]) -> Result<usize> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("cannot vote over no predictions".into()));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &p in predictions {
        *counts.entry(p).or_default() += 1;
    }
    let mut best = (0, usize::MAX);
    for (class, n) in counts {
        if n > best.0 {
            best = (n, class);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteCurve {
    pub sequence_length_seconds: Vec<f64>,
    pub accuracy_at_length: Vec<f64>,
}

impl VoteCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("length_seconds,accuracy\n");
        for (l, a) in self.sequence_length_seconds.iter().zip(&self.accuracy_at_length) {
            let _ = writeln!(out, "{l},{a}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_csv().as_bytes())
    }

    /// Shortest length whose accuracy reaches `target`.
    pub fn first_reaching(&self, target: f64) -> Option<f64> {
        self.sequence_length_seconds
            .iter()
            .zip(&self.accuracy_at_length)
            .find(|(_, &a)| a >= target)
            .map(|(&l, _)| l)
    }
}

/// One sample's duration, then every 5 s up to `max_seconds`.
pub fn default_lengths(sample_seconds: f64, max_seconds: f64) -> Vec<f64> {
    let mut out = vec![sample_seconds];
    let mut l = 5.0;
    while l <= max_seconds + 1e-9 {
        if l > sample_seconds + 1e-9 {
            out.push(l);
        }
        l += 5.0;
    }
    out
}

/// Majority-vote accuracy over sequences of each length in `lengths`.
///
/// A placement of `L` seconds starts every `stride_seconds` in each take and
/// holds as many consecutive non-overlapping samples as fit. Correctness is
/// averaged over placements per subject, then over subjects. Lengths that
/// hold no sample, or that no take is long enough for, are left out.
pub fn vote_curve(
    model: &TrainedModel,
    takes: &[Take],
    lengths: &[f64],
    stride_seconds: f64,
    enc: &EncoderConfig,
) -> Result<VoteCurve> {
    if !(stride_seconds > 0.0) {
        return Err(Error::InvalidArgument("placement stride must be positive".into()));
    }
    let truth = class_indices(model, takes.iter().map(|t| &t.subject_id))?;
    let predictor = model.predictor()?;
    let n = model.data.frames_per_sample();

    // Per take: prepared sequence and memoized predictions per start row.
    let prepared: Vec<_> = takes
        .par_iter()
        .map(|t| sampling::prepare_sequence(t, model.encoding, &model.data, enc))
        .collect::<Result<_>>()?;

    struct Plan {
        rows_per_second: f64,
        stride_rows: usize,
        len: usize,
    }
    let plans: Vec<Plan> = prepared
        .iter()
        .map(|seq| Plan {
            rows_per_second: seq.fps,
            stride_rows: ((stride_seconds * seq.fps).round() as usize).max(1),
            len: seq.len(),
        })
        .collect();
    let samples_for = |plan: &Plan, l: f64| ((l * plan.rows_per_second + 1e-9).floor() as usize) / n;

    let mut needed: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); takes.len()];
    for (ti, plan) in plans.iter().enumerate() {
        for &l in lengths {
            let k = samples_for(plan, l);
            if k == 0 {
                continue;
            }
            let mut p = 0;
            while p + k * n <= plan.len {
                for j in 0..k {
                    needed[ti].insert(p + j * n);
                }
                p += plan.stride_rows;
            }
        }
    }
    let preds: Vec<BTreeMap<usize, usize>> = prepared
        .par_iter()
        .zip(&needed)
        .map(|(seq, starts)| {
            starts
                .par_iter()
                .map(|&s| {
                    let x = sampling::sample_at(seq, &model.data, s).expect("start fits the sequence");
                    predictor.predict(&x).map(|c| (s, c))
                })
                .collect::<Result<BTreeMap<_, _>>>()
        })
        .collect::<Result<_>>()?;

    let mut curve = VoteCurve {
        sequence_length_seconds: Vec::new(),
        accuracy_at_length: Vec::new(),
    };
    for &l in lengths {
        let mut per_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        let mut any_k = false;
        for (ti, plan) in plans.iter().enumerate() {
            let k = samples_for(plan, l);
            if k == 0 {
                continue;
            }
            any_k = true;
            let mut p = 0;
            while p + k * n <= plan.len {
                let votes: Vec<usize> = (0..k).map(|j| preds[ti][&(p + j * n)]).collect();
                let entry = per_class.entry(truth[ti]).or_default();
                entry.0 += usize::from(majority_vote(&votes)? == truth[ti]);
                entry.1 += 1;
                p += plan.stride_rows;
            }
        }
        if !any_k {
            warn!("sequence length {l} s is shorter than one sample; skipped");
            continue;
        }
        if per_class.is_empty() {
            warn!("no test take is {l} s long; skipped");
            continue;
        }
        let acc = per_class.values().map(|&(c, t)| c as f64 / t as f64).sum::<f64>() / per_class.len() as f64;
        curve.sequence_length_seconds.push(l);
        curve.accuracy_at_length.push(acc);
    }
    Ok(curve)
}

/// Shifts every tracked position by `(dx, 0, dz)`; rotations are untouched.
pub fn sr_offset(take: &Take, dx: f64, dz: f64) -> Take {
    let shift = Vec3::new(dx, 0.0, dz);
    let mut out = take.clone();
    for f in &mut out.frames {
        for p in f.poses_mut() {
            p.position += shift;
        }
    }
    out
}

/// Monte-Carlo voted accuracy of a predictor that returns the true class
/// with probability `p_correct` and otherwise a uniformly chosen wrong class.
/// The true class is drawn per trial so the tie-break favors no class.
pub fn simulate_voting(p_correct: f64, n_classes: usize, votes: usize, trials: usize, seed_: u64) -> f64 {
    assert!(n_classes >= 2 && votes >= 1 && trials >= 1);
    let mut rng = seed::derived_rng(seed_, &format!("vote-sim/{votes}"));
    let mut correct = 0usize;
    let mut buf = Vec::with_capacity(votes);
    for _ in 0..trials {
        let truth = rng.random_range(0..n_classes);
        buf.clear();
        for _ in 0..votes {
            let c = if rng.random::<f64>() < p_correct {
                truth
            } else {
                let w = rng.random_range(0..n_classes - 1);
                if w >= truth {
                    w + 1
                } else {
                    w
                }
            };
            buf.push(c);
        }
        correct += usize::from(majority_vote(&buf).expect("non-empty") == truth);
    }
    correct as f64 / trials as f64
}
