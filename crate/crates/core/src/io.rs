//! Take files, manifests and the plain-text table format shared by takes and
//! encoded feature sequences.
//!
//! A take is stored as two files: `<name>.csv` with a header row and one row
//! per frame, and `<name>.meta.json` holding subject id, take id and frame
//! rate. Numbers are written in shortest round-trip form, so reading a file
//! back reproduces the exact values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MotionFrame, Pose, Take, UnitQuaternion, Vec3};

pub const TAKE_DEVICES: [&str; 3] = ["head", "lw", "rw"];
const POSE_FIELDS: [&str; 7] = ["px", "py", "pz", "qx", "qy", "qz", "qw"];

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// `foo/bar.csv` -> `foo/bar.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

pub fn take_header() -> Vec<String> {
    let mut h = vec!["frame".to_string()];
    for d in TAKE_DEVICES {
        for f in POSE_FIELDS {
            h.push(format!("{d}_{f}"));
        }
    }
    h
}

/// Renders a header plus indexed numeric rows.
pub fn format_table(header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for (i, row) in rows.into_iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Parses a table written by [`format_table`], checking the header exactly.
pub fn parse_table(text: &str, header: &[String]) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines
        .next()
        .ok_or_else(|| Error::Format("empty file, missing header".into()))?;
    let cols: Vec<&str> = head.split(',').map(str::trim).collect();
    for (i, want) in header.iter().enumerate() {
        match cols.get(i) {
            Some(got) if got == want => {}
            Some(got) => {
                return Err(Error::Format(format!(
                    "unexpected column `{got}` at position {i}, expected `{want}`"
                )))
            }
            None => return Err(Error::Format(format!("missing column `{want}`"))),
        }
    }
    if cols.len() > header.len() {
        return Err(Error::Format(format!(
            "unexpected column `{}` at position {}",
            cols[header.len()],
            header.len()
        )));
    }
    let width = header.len() - 1;
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::parse(
                i + 1,
                format!("expected {} columns, found {}", header.len(), cells.len()),
            ));
        }
        let mut row = Vec::with_capacity(width);
        for c in &cells[1..] {
            let v: f64 = c
                .trim()
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("invalid number `{c}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(i + 1, format!("non-finite value `{c}`")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeMeta {
    pub subject_id: String,
    pub take_id: String,
    pub fps: f64,
}

fn frame_row(f: &MotionFrame) -> Vec<f64> {
    let mut row = Vec::with_capacity(21);
    for p in f.poses() {
        row.extend(p.position.to_array());
        row.extend(p.rotation.to_array());
    }
    row
}

fn row_frame(row: &[f64]) -> Result<MotionFrame> {
    let pose = |o: usize| -> Result<Pose> {
        let raw = UnitQuaternion {
            x: row[o + 3],
            y: row[o + 4],
            z: row[o + 5],
            w: row[o + 6],
        };
        // Keep stored values bit-exact; only repair visibly unnormalized input.
        let q = if (raw.norm() - 1.0).abs() <= 1e-9 {
            raw
        } else {
            UnitQuaternion::new(raw.x, raw.y, raw.z, raw.w)?
        };
        Ok(Pose::new(Vec3::new(row[o], row[o + 1], row[o + 2]), q))
    };
    Ok(MotionFrame {
        head: pose(0)?,
        wrist_left: pose(7)?,
        wrist_right: pose(14)?,
    })
}

pub fn format_take(take: &Take) -> String {
    format_table(&take_header(), take.frames.iter().map(frame_row))
}

pub fn parse_take(text: &str, meta: TakeMeta) -> Result<Take> {
    let rows = parse_table(text, &take_header())?;
    let frames = rows
        .iter()
        .map(|r| row_frame(r))
        .collect::<Result<Vec<_>>>()?;
    Take::new(meta.subject_id, meta.take_id, meta.fps, frames)
}

pub fn write_take(path: &Path, take: &Take) -> Result<()> {
    write_atomic(path, format_take(take).as_bytes())?;
    write_json(
        &meta_path(path),
        &TakeMeta {
            subject_id: take.subject_id.clone(),
            take_id: take.take_id.clone(),
            fps: take.fps,
        },
    )
}

pub fn read_take(path: &Path) -> Result<Take> {
    let meta: TakeMeta = read_json(&meta_path(path))?;
    let text = read_to_string(path)?;
    parse_take(&text, meta).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Parse { line, message } => {
            Error::Format(format!("{}:{line}: {message}", path.display()))
        }
        e => e,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeEntry {
    pub take_id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub fps: f64,
    pub frame_count: usize,
    /// Recording session; subjects seen in several sessions keep only their
    /// longest one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    /// Whether the take comes from a scene with two subjects.
    #[serde(default = "default_true")]
    pub two_subject_scene: bool,
}

fn default_true() -> bool {
    true
}

impl TakeEntry {
    pub fn duration_seconds(&self) -> f64 {
        self.frame_count as f64 / self.fps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub takes: Vec<TakeEntry>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub subjects: Vec<SubjectEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn take(&self, subject_id: &str, take_id: &str) -> Option<&TakeEntry> {
        self.subjects
            .iter()
            .find(|s| s.subject_id == subject_id)?
            .takes
            .iter()
            .find(|t| t.take_id == take_id)
    }

    /// Adds a take, creating the subject entry on first use.
    pub fn push(&mut self, subject_id: &str, entry: TakeEntry) {
        match self.subjects.iter_mut().find(|s| s.subject_id == subject_id) {
            Some(s) => s.takes.push(entry),
            None => self.subjects.push(SubjectEntry {
                subject_id: subject_id.to_string(),
                takes: vec![entry],
            }),
        }
    }
}

pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
