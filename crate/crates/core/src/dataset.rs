//! Take filtering and the per-subject train/validation/test split.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Take;
use crate::io::{self, Manifest, TakeEntry};

/// Largest standard deviation over the nine position channels (meters).
/// Frozen armatures score zero.
pub fn movement_score(take: &Take) -> f64 {
    let n = take.len() as f64;
    let mut best: f64 = 0.0;
    for device in 0..3 {
        for axis in 0..3 {
            let value = |f: &crate::geometry::MotionFrame| f.poses()[device].position.to_array()[axis];
            let mean = take.frames.iter().map(value).sum::<f64>() / n;
            let var = take
                .frames
                .iter()
                .map(|f| (value(f) - mean).powi(2))
                .sum::<f64>()
                / n;
            best = best.max(var.sqrt());
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_take_seconds: f64,
    /// Minimum [`movement_score`] in meters.
    pub movement_threshold: f64,
    pub min_takes_per_subject: usize,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            min_take_seconds: 300.0,
            movement_threshold: 0.001,
            min_takes_per_subject: 3,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_take_seconds > 0.0 && self.movement_threshold > 0.0) || self.min_takes_per_subject < 3 {
            return Err(Error::InvalidArgument(format!(
                "filter policy needs positive thresholds and at least 3 takes per subject: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TakeRef {
    pub subject_id: String,
    pub take_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<TakeRef>,
    pub validation: Vec<TakeRef>,
    pub test: Vec<TakeRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub subject_id: String,
    pub take_id: String,
    pub role: Role,
}

impl DatasetSplit {
    pub fn role(&self, role: Role) -> &[TakeRef] {
        match role {
            Role::Train => &self.train,
            Role::Validation => &self.validation,
            Role::Test => &self.test,
        }
    }

    /// Subject ids in sorted order; class indices follow this order.
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.test.iter().map(|t| t.subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn records(&self) -> Vec<SplitRecord> {
        [Role::Train, Role::Validation, Role::Test]
            .into_iter()
            .flat_map(|r| {
                self.role(r).iter().map(move |t| SplitRecord {
                    subject_id: t.subject_id.clone(),
                    take_id: t.take_id.clone(),
                    role: r,
                })
            })
            .collect()
    }

    pub fn from_records(records: &[SplitRecord]) -> Self {
        let mut split = DatasetSplit::default();
        for r in records {
            let t = TakeRef {
                subject_id: r.subject_id.clone(),
                take_id: r.take_id.clone(),
            };
            match r.role {
                Role::Train => split.train.push(t),
                Role::Validation => split.validation.push(t),
                Role::Test => split.test.push(t),
            }
        }
        split
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_json(path, &self.records())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let records: Vec<SplitRecord> = io::read_json(path)?;
        Ok(Self::from_records(&records))
    }
}

fn by_length(a: &TakeEntry, b: &TakeEntry) -> std::cmp::Ordering {
    a.duration_seconds()
        .total_cmp(&b.duration_seconds())
        .then_with(|| a.take_id.cmp(&b.take_id))
}

/// Applies the take filters and assigns, per subject, the shortest take to
/// test, the second shortest to validation and the rest to training.
///
/// `movement` is consulted only for takes that pass the cheaper checks.
/// Subjects recorded in several sessions keep only the session with the most
/// surviving footage.
pub fn filter_and_split(
    manifest: &Manifest,
    policy: &FilterPolicy,
    mut movement: impl FnMut(&str, &TakeEntry) -> Result<f64>,
) -> Result<DatasetSplit> {
    policy.validate()?;
    let mut split = DatasetSplit::default();
    let mut subjects: Vec<_> = manifest.subjects.iter().collect();
    subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    for subject in subjects {
        let mut kept: Vec<&TakeEntry> = Vec::new();
        for t in &subject.takes {
            if !t.two_subject_scene || t.duration_seconds() < policy.min_take_seconds {
                continue;
            }
            if movement(&subject.subject_id, t)? < policy.movement_threshold {
                log::info!("{}/{}: no movement, excluded", subject.subject_id, t.take_id);
                continue;
            }
            kept.push(t);
        }
        let mut sessions: BTreeMap<&str, Vec<&TakeEntry>> = BTreeMap::new();
        for t in kept {
            sessions.entry(t.session.as_deref().unwrap_or("")).or_default().push(t);
        }
        let Some(mut takes) = sessions
            .into_values()
            .map(|v| (v.iter().map(|t| t.duration_seconds()).sum::<f64>(), v))
            // max_by keeps the last maximum; iterate reversed so ties go to
            // the lexicographically first session.
            .rev()
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, v)| v)
        else {
            continue;
        };
        if takes.len() < policy.min_takes_per_subject {
            log::info!("{}: only {} usable takes, dropped", subject.subject_id, takes.len());
            continue;
        }
        takes.sort_by(|a, b| by_length(a, b));
        let r = |t: &TakeEntry| TakeRef {
            subject_id: subject.subject_id.clone(),
            take_id: t.take_id.clone(),
        };
        split.test.push(r(takes[0]));
        split.validation.push(r(takes[1]));
        split.train.extend(takes[2..].iter().map(|t| r(t)));
    }
    if split.test.is_empty() {
        return Err(Error::InvalidArgument("no subject survives filtering".into()));
    }
    Ok(split)
}

/// [`filter_and_split`] reading takes from disk to score movement.
pub fn filter_and_split_files(
    manifest: &Manifest,
    manifest_dir: &Path,
    policy: &FilterPolicy,
) -> Result<DatasetSplit> {
    filter_and_split(manifest, policy, |_, entry| {
        let take = io::read_take(&io::resolve(manifest_dir, &entry.path))?;
        Ok(movement_score(&take))
    })
}
