//! Binned statistic samples, resampled windows and standardization.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::{self, EncoderConfig, EncodingKind, FeatureSequence};
use crate::error::{Error, Result};
use crate::geometry::Take;
use crate::io;

/// Statistics per feature in a binned sample, in emission order.
pub const BIN_STATS: [&str; 5] = ["min", "max", "mean", "median", "std"];

pub const FPS_GRID: [f64; 4] = [10.0, 30.0, 60.0, 90.0];
pub const WINDOW_GRID: [usize; 3] = [10, 100, 300];
pub const FRAMES_PER_BIN_RANGE: (usize, usize) = (10, 1350);

/// How a feature sequence is cut into samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DataParams {
    Binned { frames_per_bin: usize },
    Windowed { fps_target: f64, window_size: usize },
}

impl DataParams {
    /// One second of data at 90 fps in either mode.
    pub const BINNED_ONE_SECOND: DataParams = DataParams::Binned { frames_per_bin: 90 };
    pub const WINDOWED_ONE_SECOND: DataParams = DataParams::Windowed {
        fps_target: 30.0,
        window_size: 30,
    };

    pub fn validate(&self) -> Result<()> {
        match *self {
            DataParams::Binned { frames_per_bin } => {
                let (lo, hi) = FRAMES_PER_BIN_RANGE;
                if !(lo..=hi).contains(&frames_per_bin) {
                    return Err(Error::InvalidArgument(format!(
                        "frames_per_bin {frames_per_bin} outside [{lo}, {hi}]"
                    )));
                }
            }
            DataParams::Windowed {
                fps_target,
                window_size,
            } => {
                if !FPS_GRID.contains(&fps_target) {
                    return Err(Error::InvalidArgument(format!(
                        "fps {fps_target} not one of {FPS_GRID:?}"
                    )));
                }
                // The one-second search fixture sits off the grid.
                let fixture = DataParams::WINDOWED_ONE_SECOND == *self;
                if !WINDOW_GRID.contains(&window_size) && !fixture {
                    return Err(Error::InvalidArgument(format!(
                        "window size {window_size} not one of {WINDOW_GRID:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_windowed(&self) -> bool {
        matches!(self, DataParams::Windowed { .. })
    }

    /// Seconds of recording covered by one sample.
    pub fn duration_seconds(&self, source_fps: f64) -> f64 {
        match *self {
            DataParams::Binned { frames_per_bin } => frames_per_bin as f64 / source_fps,
            DataParams::Windowed {
                fps_target,
                window_size,
            } => window_size as f64 / fps_target,
        }
    }

    /// Rows of the prepared feature sequence consumed by one sample.
    pub fn frames_per_sample(&self) -> usize {
        match *self {
            DataParams::Binned { frames_per_bin } => frames_per_bin,
            DataParams::Windowed { window_size, .. } => window_size,
        }
    }

    /// `(rows, width)` of one sample for features of the given encoding.
    pub fn sample_shape(&self, kind: EncodingKind) -> (usize, usize) {
        match *self {
            DataParams::Binned { .. } => (1, BIN_STATS.len() * kind.width()),
            DataParams::Windowed { window_size, .. } => (window_size, kind.width()),
        }
    }
}

/// A labeled sample of `rows x width` values stored row-major. Binned
/// samples have a single row.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub rows: usize,
    pub width: usize,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn new(rows: usize, width: usize) -> Self {
        SampleSet {
            rows,
            width,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn extend(&mut self, samples: impl IntoIterator<Item = Sample>) {
        let n = self.rows * self.width;
        for s in samples {
            assert_eq!(s.values.len(), n, "sample shape mismatch");
            self.samples.push(s);
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("label");
        for i in 0..self.rows * self.width {
            let _ = write!(out, ",v{i}");
        }
        out.push('\n');
        for s in &self.samples {
            out.push_str(&s.label);
            for v in &s.values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        io::write_atomic(path, out.as_bytes())?;
        io::write_json(
            &io::meta_path(path),
            &SampleSetMeta {
                rows: self.rows,
                width: self.width,
            },
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: SampleSetMeta = io::read_json(&io::meta_path(path))?;
        let text = io::read_to_string(path)?;
        let mut set = SampleSet::new(meta.rows, meta.width);
        let n = meta.rows * meta.width;
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let label = cells.next().unwrap_or_default().to_string();
            let values = cells
                .map(|c| {
                    c.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::parse(i + 1, format!("invalid value `{c}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != n {
                return Err(Error::parse(i + 1, format!("expected {n} values, found {}", values.len())));
            }
            set.samples.push(Sample { label, values });
        }
        Ok(set)
    }
}

#[derive(Serialize, Deserialize)]
struct SampleSetMeta {
    rows: usize,
    width: usize,
}

/// min, max, mean, median and population standard deviation of every column
/// of `rows` (row-major, `width` columns), laid out feature by feature.
pub fn bin_statistics(rows: &[f64], width: usize) -> Vec<f64> {
    let n = rows.len() / width;
    assert!(n > 0, "empty bin");
    let mut out = Vec::with_capacity(width * BIN_STATS.len());
    let mut col = vec![0.0; n];
    for f in 0..width {
        for (t, c) in col.iter_mut().enumerate() {
            *c = rows[t * width + f];
        }
        // Sums run in time order; sorting is only for the order statistics.
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        col.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            col[n / 2]
        } else {
            (col[n / 2 - 1] + col[n / 2]) / 2.0
        };
        out.extend([col[0], col[n - 1], mean, median, var.sqrt()]);
    }
    out
}

/// Non-overlapping bins of exactly `frames_per_bin` rows; a trailing partial
/// bin is dropped.
pub fn make_binned(seq: &FeatureSequence, frames_per_bin: usize) -> Result<Vec<Sample>> {
    if frames_per_bin < 2 {
        return Err(Error::InvalidArgument(format!(
            "frames_per_bin must be at least 2, got {frames_per_bin}"
        )));
    }
    let w = seq.width();
    Ok(seq
        .values
        .chunks_exact(frames_per_bin * w)
        .map(|chunk| Sample {
            label: seq.subject_id.clone(),
            values: bin_statistics(chunk, w),
        })
        .collect())
}

/// Source indices picked when resampling `len` frames from `fps_source` to
/// `fps_target`: nearest source frame on a uniform target grid from t = 0.
pub fn resample_indices(len: usize, fps_source: f64, fps_target: f64) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    if fps_source == fps_target {
        return (0..len).collect();
    }
    let ratio = fps_source / fps_target;
    let n = (((len - 1) as f64) / ratio + 1e-9).floor() as usize + 1;
    (0..n)
        .map(|k| ((k as f64 * ratio).round() as usize).min(len - 1))
        .collect()
}

fn check_target_fps(fps_source: f64, fps_target: f64) -> Result<()> {
    if !(fps_target > 0.0 && fps_target <= fps_source + 1e-9) {
        return Err(Error::InvalidArgument(format!(
            "target fps {fps_target} must be positive and at most the source rate {fps_source}"
        )));
    }
    Ok(())
}

pub fn resample_take(take: &Take, fps_target: f64) -> Result<Take> {
    check_target_fps(take.fps, fps_target)?;
    let idx = resample_indices(take.len(), take.fps, fps_target);
    Ok(Take {
        subject_id: take.subject_id.clone(),
        take_id: take.take_id.clone(),
        fps: fps_target,
        frames: idx.iter().map(|&i| take.frames[i]).collect(),
    })
}

pub fn resample_sequence(seq: &FeatureSequence, fps_target: f64) -> Result<FeatureSequence> {
    check_target_fps(seq.fps, fps_target)?;
    if seq.fps == fps_target {
        return Ok(seq.clone());
    }
    let idx = resample_indices(seq.len(), seq.fps, fps_target);
    let mut values = Vec::with_capacity(idx.len() * seq.width());
    for i in idx {
        values.extend_from_slice(seq.row(i));
    }
    Ok(FeatureSequence {
        values,
        fps: fps_target,
        ..seq.clone()
    })
}

/// Resamples `seq` to `fps_target` and cuts windows of `window_size` rows
/// every `stride` rows. Windows that would run past the end are dropped.
pub fn make_windows(
    seq: &FeatureSequence,
    fps_target: f64,
    window_size: usize,
    stride: usize,
) -> Result<Vec<Sample>> {
    if window_size == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "window size and stride must be at least 1".into(),
        ));
    }
    let seq = resample_sequence(seq, fps_target)?;
    let w = seq.width();
    let n = seq.len();
    let mut out = Vec::new();
    let mut start = 0;
    while start + window_size <= n {
        out.push(Sample {
            label: seq.subject_id.clone(),
            values: seq.values[start * w..(start + window_size) * w].to_vec(),
        });
        start += stride;
    }
    Ok(out)
}

/// Encodes a take the way models under `params` consume it. Windowed
/// pipelines resample before encoding so velocity features span one frame
/// period at the target rate.
pub fn prepare_sequence(
    take: &Take,
    kind: EncodingKind,
    params: &DataParams,
    cfg: &EncoderConfig,
) -> Result<FeatureSequence> {
    match *params {
        DataParams::Binned { .. } => encoding::encode(take, kind, cfg),
        DataParams::Windowed { fps_target, .. } => {
            encoding::encode(&resample_take(take, fps_target)?, kind, cfg)
        }
    }
}

/// The sample starting at row `start` of a prepared sequence, or `None` if
/// it would run past the end.
pub fn sample_at(seq: &FeatureSequence, params: &DataParams, start: usize) -> Option<Vec<f64>> {
    let n = params.frames_per_sample();
    if start + n > seq.len() {
        return None;
    }
    let w = seq.width();
    let rows = &seq.values[start * w..(start + n) * w];
    Some(match params {
        DataParams::Binned { .. } => bin_statistics(rows, w),
        DataParams::Windowed { .. } => rows.to_vec(),
    })
}

/// Samples from a prepared sequence, starting every `stride` rows.
pub fn samples_from_sequence(
    seq: &FeatureSequence,
    params: &DataParams,
    stride: usize,
) -> Result<Vec<Sample>> {
    match *params {
        DataParams::Binned { frames_per_bin } if stride == frames_per_bin => {
            make_binned(seq, frames_per_bin)
        }
        DataParams::Windowed {
            fps_target,
            window_size,
        } => make_windows(seq, fps_target, window_size, stride),
        DataParams::Binned { .. } => {
            if stride == 0 {
                return Err(Error::InvalidArgument("stride must be at least 1".into()));
            }
            let mut out = Vec::new();
            let mut start = 0;
            while let Some(values) = sample_at(seq, params, start) {
                out.push(Sample {
                    label: seq.subject_id.clone(),
                    values,
                });
                start += stride;
            }
            Ok(out)
        }
    }
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-column standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    /// Fits column statistics over every row of every sample.
    pub fn fit(set: &SampleSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::InvalidArgument("cannot fit a scaler on no samples".into()));
        }
        let w = set.width;
        let mut sum = vec![0.0; w];
        let mut count = 0usize;
        for s in &set.samples {
            for row in s.values.chunks_exact(w) {
                for (a, v) in sum.iter_mut().zip(row) {
                    *a += v;
                }
                count += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; w];
        for s in &set.samples {
            for row in s.values.chunks_exact(w) {
                for ((a, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *a += (v - m) * (v - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| (s / count as f64).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Scaler { mean, std })
    }

    pub fn transform(&self, values: &mut [f64]) {
        let w = self.mean.len();
        for row in values.chunks_exact_mut(w) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    pub fn inverse_transform(&self, values: &mut [f64]) {
        let w = self.mean.len();
        for row in values.chunks_exact_mut(w) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
    }

    pub fn apply(&self, set: &mut SampleSet) {
        assert_eq!(set.width, self.mean.len(), "scaler width mismatch");
        for s in &mut set.samples {
            self.transform(&mut s.values);
        }
    }
}
