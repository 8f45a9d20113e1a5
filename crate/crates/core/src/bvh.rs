//! BVH parsing, forward kinematics and three-point extraction.
//!
//! Supported grammar: `HIERARCHY`, a single `ROOT`, nested `JOINT` and
//! `End Site` blocks with `OFFSET` and `CHANNELS` (0, 3 or 6 channels),
//! followed by `MOTION`, `Frames:`, `Frame Time:` and one whitespace
//! separated row per frame. Rotation channels are composed intrinsically in
//! the order they are declared.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{MotionFrame, Pose, Take, UnitQuaternion, Vec3};
use crate::io::{self, Manifest, TakeEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Xposition => "Xposition",
            Channel::Yposition => "Yposition",
            Channel::Zposition => "Zposition",
            Channel::Xrotation => "Xrotation",
            Channel::Yrotation => "Yrotation",
            Channel::Zrotation => "Zrotation",
        }
    }

    fn axis(self) -> Vec3 {
        match self {
            Channel::Xposition | Channel::Xrotation => Vec3::new(1.0, 0.0, 0.0),
            Channel::Yposition | Channel::Yrotation => Vec3::new(0.0, 1.0, 0.0),
            Channel::Zposition | Channel::Zrotation => Vec3::new(0.0, 0.0, 1.0),
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(
            self,
            Channel::Xrotation | Channel::Yrotation | Channel::Zrotation
        )
    }
}

impl FromStr for Channel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "xposition" => Channel::Xposition,
            "yposition" => Channel::Yposition,
            "zposition" => Channel::Zposition,
            "xrotation" => Channel::Xrotation,
            "yrotation" => Channel::Yrotation,
            "zrotation" => Channel::Zrotation,
            _ => return Err(format!("unknown channel `{s}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhJoint {
    pub name: String,
    pub offset: Vec3,
    pub channels: Vec<Channel>,
    pub children: Vec<BvhJoint>,
    /// Offset of a terminating `End Site`, kept only for serialization.
    pub end_site: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhClip {
    pub root: BvhJoint,
    pub frame_time: f64,
    /// One row of channel values per frame, in depth-first joint order.
    pub frames: Vec<Vec<f64>>,
}

/// A joint in depth-first order with its parent link and the column where its
/// channels start within a motion row.
#[derive(Debug, Clone)]
pub struct FlatJoint<'a> {
    pub joint: &'a BvhJoint,
    pub parent: Option<usize>,
    pub channel_start: usize,
}

impl BvhClip {
    pub fn joints(&self) -> Vec<FlatJoint<'_>> {
        fn walk<'a>(
            j: &'a BvhJoint,
            parent: Option<usize>,
            next_channel: &mut usize,
            out: &mut Vec<FlatJoint<'a>>,
        ) {
            let idx = out.len();
            out.push(FlatJoint {
                joint: j,
                parent,
                channel_start: *next_channel,
            });
            *next_channel += j.channels.len();
            for c in &j.children {
                walk(c, Some(idx), next_channel, out);
            }
        }
        let mut out = Vec::new();
        let mut next = 0;
        walk(&self.root, None, &mut next, &mut out);
        out
    }

    pub fn channel_count(&self) -> usize {
        self.joints().iter().map(|j| j.joint.channels.len()).sum()
    }

    pub fn fps(&self) -> f64 {
        1.0 / self.frame_time
    }

    /// World pose of every joint, in depth-first order, for one frame.
    pub fn world_poses(&self, frame_index: usize) -> Vec<Pose> {
        world_poses(&self.joints(), &self.frames[frame_index])
    }

    /// World pose of every joint keyed by joint name.
    pub fn forward_kinematics(&self, frame_index: usize) -> BTreeMap<String, Pose> {
        let joints = self.joints();
        let poses = world_poses(&joints, &self.frames[frame_index]);
        joints
            .iter()
            .zip(poses)
            .map(|(j, p)| (j.joint.name.clone(), p))
            .collect()
    }

    /// Writes the clip back out as BVH text.
    pub fn to_bvh_string(&self) -> String {
        fn joint(out: &mut String, j: &BvhJoint, depth: usize, is_root: bool) {
            let ind = "\t".repeat(depth);
            let kw = if is_root { "ROOT" } else { "JOINT" };
            let _ = writeln!(out, "{ind}{kw} {}", j.name);
            let _ = writeln!(out, "{ind}{{");
            let _ = writeln!(
                out,
                "{ind}\tOFFSET {} {} {}",
                j.offset.x, j.offset.y, j.offset.z
            );
            let names: Vec<&str> = j.channels.iter().map(|c| c.as_str()).collect();
            let _ = writeln!(out, "{ind}\tCHANNELS {} {}", names.len(), names.join(" "));
            for c in &j.children {
                joint(out, c, depth + 1, false);
            }
            if let Some(e) = j.end_site {
                let _ = writeln!(out, "{ind}\tEnd Site");
                let _ = writeln!(out, "{ind}\t{{");
                let _ = writeln!(out, "{ind}\t\tOFFSET {} {} {}", e.x, e.y, e.z);
                let _ = writeln!(out, "{ind}\t}}");
            }
            let _ = writeln!(out, "{ind}}}");
        }
        let mut out = String::from("HIERARCHY\n");
        joint(&mut out, &self.root, 0, true);
        let _ = writeln!(out, "MOTION");
        let _ = writeln!(out, "Frames: {}", self.frames.len());
        let _ = writeln!(out, "Frame Time: {}", self.frame_time);
        for row in &self.frames {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }
}

fn local_pose(joint: &BvhJoint, values: &[f64]) -> Pose {
    let mut translation = joint.offset;
    let mut rotation = UnitQuaternion::IDENTITY;
    for (&c, &v) in joint.channels.iter().zip(values) {
        if c.is_rotation() {
            rotation = rotation * UnitQuaternion::from_axis_angle(c.axis(), v.to_radians());
        } else {
            translation += c.axis() * v;
        }
    }
    Pose::new(translation, rotation)
}

fn world_poses(joints: &[FlatJoint<'_>], row: &[f64]) -> Vec<Pose> {
    let mut out: Vec<Pose> = Vec::with_capacity(joints.len());
    for j in joints {
        let n = j.joint.channels.len();
        let local = local_pose(j.joint, &row[j.channel_start..j.channel_start + n]);
        let world = match j.parent {
            Some(p) => out[p].compose(local),
            None => local,
        };
        out.push(world);
    }
    out
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Tokens { items, pos: 0 }
    }

    fn last_line(&self) -> usize {
        self.items.last().map_or(1, |t| t.0)
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.items.get(self.pos).copied()
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let t = self
            .peek()
            .ok_or_else(|| Error::parse(self.last_line(), format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, word: &str) -> Result<usize> {
        let (line, t) = self.next(word)?;
        if t.eq_ignore_ascii_case(word) {
            Ok(line)
        } else {
            Err(Error::parse(line, format!("expected `{word}`, found `{t}`")))
        }
    }

    fn number(&mut self, what: &str) -> Result<f64> {
        let (line, t) = self.next(what)?;
        let v: f64 = t
            .parse()
            .map_err(|_| Error::parse(line, format!("expected {what}, found `{t}`")))?;
        if !v.is_finite() {
            return Err(Error::parse(line, format!("non-finite {what}")));
        }
        Ok(v)
    }

    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(
            self.number("offset x")?,
            self.number("offset y")?,
            self.number("offset z")?,
        ))
    }
}

const MAX_DEPTH: usize = 256;

fn parse_joint(tok: &mut Tokens<'_>, name_line: usize, depth: usize, names: &mut HashSet<String>) -> Result<BvhJoint> {
    if depth > MAX_DEPTH {
        return Err(Error::parse(name_line, "hierarchy nested too deeply"));
    }
    let (line, name) = tok.next("joint name")?;
    if name == "{" {
        return Err(Error::parse(line, "missing joint name"));
    }
    if !names.insert(name.to_string()) {
        return Err(Error::parse(line, format!("duplicate joint name `{name}`")));
    }
    tok.expect("{")?;
    let mut joint = BvhJoint {
        name: name.to_string(),
        offset: Vec3::ZERO,
        channels: Vec::new(),
        children: Vec::new(),
        end_site: None,
    };
    let mut seen_offset = false;
    loop {
        let (line, t) = tok.next("`}`")?;
        match t.to_ascii_uppercase().as_str() {
            "OFFSET" => {
                joint.offset = tok.vec3()?;
                seen_offset = true;
            }
            "CHANNELS" => {
                let n = tok.number("channel count")?;
                if n != 0.0 && n != 3.0 && n != 6.0 {
                    return Err(Error::parse(line, format!("channel count must be 0, 3 or 6, got {n}")));
                }
                for _ in 0..n as usize {
                    let (l, c) = tok.next("channel name")?;
                    joint
                        .channels
                        .push(c.parse().map_err(|e: String| Error::parse(l, e))?);
                }
            }
            "JOINT" => joint.children.push(parse_joint(tok, line, depth + 1, names)?),
            "END" => {
                tok.expect("Site")?;
                tok.expect("{")?;
                tok.expect("OFFSET")?;
                joint.end_site = Some(tok.vec3()?);
                tok.expect("}")?;
            }
            "}" => break,
            _ => return Err(Error::parse(line, format!("unexpected token `{t}`"))),
        }
    }
    if !seen_offset {
        return Err(Error::parse(name_line, format!("joint `{}` has no OFFSET", joint.name)));
    }
    Ok(joint)
}

/// Parses a BVH document.
pub fn parse_bvh(text: &str) -> Result<BvhClip> {
    let mut tok = Tokens::new(text);
    tok.expect("HIERARCHY")?;
    let root_line = tok.expect("ROOT")?;
    let mut names = HashSet::new();
    let root = parse_joint(&mut tok, root_line, 0, &mut names)?;

    match tok.peek() {
        Some((_, t)) if t.eq_ignore_ascii_case("MOTION") => tok.pos += 1,
        Some((line, t)) => {
            return Err(Error::parse(line, format!("expected `MOTION`, found `{t}`")))
        }
        None => return Err(Error::parse(tok.last_line(), "missing MOTION section")),
    }
    tok.expect("Frames:")?;
    let declared = tok.number("frame count")?;
    if declared < 0.0 || declared.fract() != 0.0 {
        return Err(Error::parse(tok.last_line(), "frame count must be a non-negative integer"));
    }
    let declared = declared as usize;
    tok.expect("Frame")?;
    let time_line = tok.expect("Time:")?;
    let frame_time = tok.number("frame time")?;
    if frame_time <= 0.0 {
        return Err(Error::parse(time_line, "frame time must be positive"));
    }

    let mut clip = BvhClip {
        root,
        frame_time,
        frames: Vec::new(),
    };
    let width = clip.channel_count();

    // Remaining tokens grouped back into their source lines.
    let rest = &tok.items[tok.pos..];
    let mut i = 0;
    while i < rest.len() {
        let line = rest[i].0;
        let mut row = Vec::with_capacity(width);
        while i < rest.len() && rest[i].0 == line {
            let t = rest[i].1;
            let v: f64 = t
                .parse()
                .map_err(|_| Error::parse(line, format!("invalid number `{t}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, "non-finite channel value"));
            }
            row.push(v);
            i += 1;
        }
        if row.len() != width {
            return Err(Error::parse(
                line,
                format!("channel-count mismatch: expected {width} values, found {}", row.len()),
            ));
        }
        clip.frames.push(row);
    }
    if clip.frames.len() != declared {
        return Err(Error::FrameCountMismatch {
            declared,
            found: clip.frames.len(),
        });
    }
    Ok(clip)
}

/// A signed permutation applied to world coordinates at import, written like
/// `x,-z,y` (new x = old x, new y = -old z, new z = old y).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMap {
    source: [usize; 3],
    sign: [f64; 3],
}

impl Default for AxisMap {
    fn default() -> Self {
        AxisMap {
            source: [0, 1, 2],
            sign: [1.0; 3],
        }
    }
}

impl FromStr for AxisMap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let bad = || Error::InvalidArgument(format!("invalid axis map `{s}`, expected e.g. `x,-z,y`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut map = AxisMap::default();
        let mut used = [false; 3];
        for (i, p) in parts.iter().enumerate() {
            let (sign, axis) = match p.strip_prefix('-') {
                Some(a) => (-1.0, a),
                None => (1.0, p.strip_prefix('+').unwrap_or(p)),
            };
            let idx = match axis.to_ascii_lowercase().as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => return Err(bad()),
            };
            if used[idx] {
                return Err(bad());
            }
            used[idx] = true;
            map.source[i] = idx;
            map.sign[i] = sign;
        }
        Ok(map)
    }
}

impl AxisMap {
    fn determinant(&self) -> f64 {
        let parity = {
            let s = self.source;
            // Even permutations of (0, 1, 2) are the three rotations.
            if [[0, 1, 2], [1, 2, 0], [2, 0, 1]].contains(&s) {
                1.0
            } else {
                -1.0
            }
        };
        parity * self.sign.iter().product::<f64>()
    }

    pub fn apply_vec(&self, v: Vec3) -> Vec3 {
        let a = v.to_array();
        Vec3::new(
            self.sign[0] * a[self.source[0]],
            self.sign[1] * a[self.source[1]],
            self.sign[2] * a[self.source[2]],
        )
    }

    /// Conjugates the rotation by the axis map; the vector part is an axial
    /// vector and so also picks up the determinant.
    pub fn apply_rotation(&self, q: UnitQuaternion) -> UnitQuaternion {
        let v = self.apply_vec(q.vector()) * self.determinant();
        UnitQuaternion {
            x: v.x,
            y: v.y,
            z: v.z,
            w: q.w,
        }
    }

    pub fn apply_pose(&self, p: Pose) -> Pose {
        Pose::new(self.apply_vec(p.position), self.apply_rotation(p.rotation))
    }
}

/// Which joints stand in for the headset and controllers, and how to convert
/// the file's units and axes into meters in a +Y-up frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreePointConfig {
    pub head: String,
    pub left: String,
    pub right: String,
    /// Multiplier from file units to meters; 0.01 for centimeter files.
    pub unit_scale: f64,
    pub axes: AxisMap,
}

impl Default for ThreePointConfig {
    fn default() -> Self {
        ThreePointConfig {
            head: "b_head".into(),
            left: "b_l_wrist_twist".into(),
            right: "b_r_wrist_twist".into(),
            unit_scale: 0.01,
            axes: AxisMap::default(),
        }
    }
}

/// Extracts head and wrist world poses from every frame of `clip`.
///
/// Quaternions are sign-canonicalized on the first frame and then kept
/// hemisphere-continuous (each frame's quaternion has non-negative dot
/// product with the previous one).
pub fn extract_three_point(
    clip: &BvhClip,
    cfg: &ThreePointConfig,
    subject_id: &str,
    take_id: &str,
) -> Result<Take> {
    if !(cfg.unit_scale.is_finite() && cfg.unit_scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "unit scale must be positive, got {}",
            cfg.unit_scale
        )));
    }
    let joints = clip.joints();
    let find = |name: &str| {
        joints
            .iter()
            .position(|j| j.joint.name == name)
            .ok_or_else(|| Error::UnknownJoint {
                name: name.to_string(),
                available: joints
                    .iter()
                    .map(|j| j.joint.name.as_str())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    };
    let idx = [find(&cfg.head)?, find(&cfg.left)?, find(&cfg.right)?];

    let mut frames = Vec::with_capacity(clip.frames.len());
    let mut prev: Option<MotionFrame> = None;
    for row in &clip.frames {
        let world = world_poses(&joints, row);
        let mut frame = MotionFrame {
            head: world[idx[0]],
            wrist_left: world[idx[1]],
            wrist_right: world[idx[2]],
        };
        for (k, pose) in frame.poses_mut().into_iter().enumerate() {
            let mut p = cfg.axes.apply_pose(*pose);
            p.position = p.position * cfg.unit_scale;
            p.rotation = match &prev {
                None => p.rotation.canonical(),
                Some(pf) if pf.poses()[k].rotation.dot(p.rotation) < 0.0 => -p.rotation,
                Some(_) => p.rotation,
            };
            *pose = p;
        }
        prev = Some(frame);
        frames.push(frame);
    }
    Take::new(subject_id, take_id, clip.fps(), frames)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

fn is_bvh(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("bvh"))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// A BVH file found by [`scan_bvh_dir`].
#[derive(Debug, Clone, PartialEq)]
pub struct BvhSource {
    pub subject_id: String,
    pub session: Option<String>,
    pub take_id: String,
    pub path: PathBuf,
}

/// Finds `<dir>/<subject>/<take>.bvh` and
/// `<dir>/<subject>/<session>/<take>.bvh`.
pub fn scan_bvh_dir(dir: &Path) -> Result<Vec<BvhSource>> {
    let mut out = Vec::new();
    for subject_dir in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
        let subject_id = stem(&subject_dir);
        let mut seen = HashSet::new();
        for entry in sorted_entries(&subject_dir)? {
            let (session, files) = if entry.is_dir() {
                (Some(stem(&entry)), sorted_entries(&entry)?)
            } else {
                (None, vec![entry])
            };
            for path in files.into_iter().filter(|p| is_bvh(p)) {
                let take_id = stem(&path);
                if !seen.insert(take_id.clone()) {
                    return Err(Error::Format(format!(
                        "subject {subject_id} has two takes named {take_id}"
                    )));
                }
                out.push(BvhSource {
                    subject_id: subject_id.clone(),
                    session: session.clone(),
                    take_id,
                    path,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Format(format!("no .bvh files under {}", dir.display())));
    }
    Ok(out)
}

/// Imports every BVH file under `dir` into take files under `out`, writing
/// `out/manifest.json`. `two_subject_scene` tells, per source, whether the
/// take was recorded with two subjects in the scene.
pub fn import_dir(
    dir: &Path,
    out: &Path,
    cfg: &ThreePointConfig,
    two_subject_scene: impl Fn(&BvhSource) -> bool + Sync,
) -> Result<Manifest> {
    let sources = scan_bvh_dir(dir)?;
    let entries = sources
        .par_iter()
        .map(|src| {
            let text = io::read_to_string(&src.path)?;
            let clip = parse_bvh(&text).map_err(|e| Error::Format(format!("{}: {e}", src.path.display())))?;
            let take = extract_three_point(&clip, cfg, &src.subject_id, &src.take_id)?;
            let rel = Path::new(&src.subject_id).join(format!("{}.csv", src.take_id));
            io::write_take(&out.join(&rel), &take)?;
            Ok(TakeEntry {
                take_id: src.take_id.clone(),
                path: rel,
                fps: take.fps,
                frame_count: take.len(),
                session: src.session.clone(),
                two_subject_scene: two_subject_scene(src),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = Manifest::default();
    for (src, entry) in sources.iter().zip(entries) {
        manifest.push(&src.subject_id, entry);
    }
    manifest.write(&out.join("manifest.json"))?;
    Ok(manifest)
}
