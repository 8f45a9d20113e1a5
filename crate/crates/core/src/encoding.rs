//! Scene-relative, body-relative and body-relative velocity encodings.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Take, UnitQuaternion, Vec3};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingKind {
    Sr,
    Br,
    Brv,
}

impl EncodingKind {
    pub const ALL: [EncodingKind; 3] = [EncodingKind::Sr, EncodingKind::Br, EncodingKind::Brv];

    pub fn width(self) -> usize {
        match self {
            EncodingKind::Sr => 21,
            EncodingKind::Br | EncodingKind::Brv => 18,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncodingKind::Sr => "sr",
            EncodingKind::Br => "br",
            EncodingKind::Brv => "brv",
        }
    }

    /// Column names in emission order.
    pub fn columns(self) -> Vec<String> {
        let pose = ["px", "py", "pz", "qx", "qy", "qz", "qw"];
        let rot = ["qx", "qy", "qz", "qw"];
        let mut cols = Vec::with_capacity(self.width());
        match self {
            EncodingKind::Sr => {
                for d in ["head", "lw", "rw"] {
                    cols.extend(pose.iter().map(|f| format!("{d}_{f}")));
                }
            }
            EncodingKind::Br | EncodingKind::Brv => {
                let prefix = if self == EncodingKind::Brv { "d" } else { "" };
                for d in ["lw", "rw"] {
                    cols.extend(pose.iter().map(|f| format!("{prefix}{d}_{f}")));
                }
                cols.extend(rot.iter().map(|f| format!("{prefix}head_{f}")));
            }
        }
        cols
    }
}

impl fmt::Display for EncodingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncodingKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sr" => Ok(EncodingKind::Sr),
            "br" => Ok(EncodingKind::Br),
            "brv" => Ok(EncodingKind::Brv),
            _ => Err(Error::InvalidArgument(format!(
                "unknown encoding `{s}`, expected sr, br or brv"
            ))),
        }
    }
}

/// Reference frame for body-relative wrist poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyFrame {
    /// Head position with only the head's rotation about the up axis.
    #[default]
    Heading,
    /// Head position and full head rotation.
    FullHead,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub up_axis: Vec3,
    pub body_frame: BodyFrame,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            up_axis: crate::geometry::UP,
            body_frame: BodyFrame::Heading,
        }
    }
}

/// Per-frame feature rows of one take, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub subject_id: String,
    pub take_id: String,
    pub kind: EncodingKind,
    pub fps: f64,
    pub values: Vec<f64>,
}

impl FeatureSequence {
    pub fn width(&self) -> usize {
        self.kind.width()
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let w = self.width();
        &self.values[t * w..(t + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.width())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut header = vec!["frame".to_string()];
        header.extend(self.kind.columns());
        let text = io::format_table(&header, self.rows().map(<[f64]>::to_vec));
        io::write_atomic(path, text.as_bytes())?;
        io::write_json(
            &io::meta_path(path),
            &FeatureMeta {
                subject_id: self.subject_id.clone(),
                take_id: self.take_id.clone(),
                kind: self.kind,
                fps: self.fps,
            },
        )
    }

    pub fn read(path: &Path) -> Result<Self> {
        let meta: FeatureMeta = io::read_json(&io::meta_path(path))?;
        let mut header = vec!["frame".to_string()];
        header.extend(meta.kind.columns());
        let rows = io::parse_table(&io::read_to_string(path)?, &header)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(FeatureSequence {
            subject_id: meta.subject_id,
            take_id: meta.take_id,
            kind: meta.kind,
            fps: meta.fps,
            values: rows.concat(),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureMeta {
    subject_id: String,
    take_id: String,
    kind: EncodingKind,
    fps: f64,
}

fn push_pose(out: &mut Vec<f64>, p: &Pose) {
    out.extend(p.position.to_array());
    out.extend(p.rotation.canonical().to_array());
}

pub fn encode_sr(take: &Take) -> FeatureSequence {
    let mut values = Vec::with_capacity(take.len() * 21);
    for f in &take.frames {
        for p in f.poses() {
            push_pose(&mut values, p);
        }
    }
    FeatureSequence {
        subject_id: take.subject_id.clone(),
        take_id: take.take_id.clone(),
        kind: EncodingKind::Sr,
        fps: take.fps,
        values,
    }
}

/// Wrist poses relative to the head and the head's rotation with the part
/// about the up axis removed.
pub fn encode_br(take: &Take, cfg: &EncoderConfig) -> FeatureSequence {
    let mut values = Vec::with_capacity(take.len() * 18);
    for f in &take.frames {
        let (_, twist) = f.head.rotation.swing_twist(cfg.up_axis);
        let frame_rot = match cfg.body_frame {
            BodyFrame::Heading => twist,
            BodyFrame::FullHead => f.head.rotation,
        };
        let inv = frame_rot.inverse();
        for w in [&f.wrist_left, &f.wrist_right] {
            let rel = Pose::new(
                inv.rotate(w.position - f.head.position),
                inv * w.rotation,
            );
            push_pose(&mut values, &rel);
        }
        // Head rotation seen from the heading frame: only tilt about
        // horizontal axes remains.
        values.extend((twist.inverse() * f.head.rotation).canonical().to_array());
    }
    FeatureSequence {
        subject_id: take.subject_id.clone(),
        take_id: take.take_id.clone(),
        kind: EncodingKind::Br,
        fps: take.fps,
        values,
    }
}

const BR_QUAT_OFFSETS: [usize; 3] = [3, 10, 14];
const BR_POS_OFFSETS: [usize; 2] = [0, 7];

fn quat_at(row: &[f64], o: usize) -> UnitQuaternion {
    UnitQuaternion {
        x: row[o],
        y: row[o + 1],
        z: row[o + 2],
        w: row[o + 3],
    }
}

/// Frame-to-frame differences of the body-relative encoding. Needs at least
/// two frames and yields one row fewer than the take has.
pub fn encode_brv(take: &Take, cfg: &EncoderConfig) -> Result<FeatureSequence> {
    if take.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "take {}: velocity encoding needs at least 2 frames, got {}",
            take.take_id,
            take.len()
        )));
    }
    let br = encode_br(take, cfg);
    let mut values = Vec::with_capacity((br.len() - 1) * 18);
    for t in 1..br.len() {
        let (prev, cur) = (br.row(t - 1), br.row(t));
        let start = values.len();
        values.extend_from_slice(cur);
        let row = &mut values[start..];
        for o in BR_POS_OFFSETS {
            for k in 0..3 {
                row[o + k] = cur[o + k] - prev[o + k];
            }
        }
        for o in BR_QUAT_OFFSETS {
            let d = (quat_at(cur, o) * quat_at(prev, o).inverse()).canonical();
            row[o..o + 4].copy_from_slice(&d.to_array());
        }
    }
    Ok(FeatureSequence {
        subject_id: take.subject_id.clone(),
        take_id: take.take_id.clone(),
        kind: EncodingKind::Brv,
        fps: take.fps,
        values,
    })
}

pub fn encode(take: &Take, kind: EncodingKind, cfg: &EncoderConfig) -> Result<FeatureSequence> {
    match kind {
        EncodingKind::Sr => Ok(encode_sr(take)),
        EncodingKind::Br => Ok(encode_br(take, cfg)),
        EncodingKind::Brv => encode_brv(take, cfg),
    }
}

/// Applies a rotation of `yaw` radians about the world up axis through the
/// origin, followed by a horizontal translation, to every pose of a take.
pub fn rigid_transform(take: &Take, yaw: f64, dx: f64, dz: f64) -> Take {
    let g = UnitQuaternion::from_axis_angle(crate::geometry::UP, yaw);
    let shift = Vec3::new(dx, 0.0, dz);
    let mut out = take.clone();
    for f in &mut out.frames {
        for p in f.poses_mut() {
            p.position = g.rotate(p.position) + shift;
            p.rotation = g * p.rotation;
        }
    }
    out
}
