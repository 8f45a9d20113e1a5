//! Seeded synthetic subjects for running the whole pipeline without a
//! motion-capture corpus.
//!
//! Every subject has a latent motion signature: head height and sway, resting
//! wrist placement relative to the head, per-limb gesture frequencies,
//! amplitudes and left/right phase coupling, resting wrist orientations and a
//! home position and preferred facing in the scene. Homes sit on a grid
//! `home_spacing` apart. A take renders the signature with a facing drawn
//! around the preferred one, a slow turn that sweeps the heading around the
//! circle, fresh phases, slow amplitude modulation and band-limited noise
//! (sums of low-frequency sinusoids with random phases).

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MotionFrame, Pose, Take, UnitQuaternion, Vec3, UP};
use crate::io::{self, Manifest, TakeEntry};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub takes_per_subject: usize,
    pub seconds_per_take: f64,
    pub fps: f64,
    pub seed: u64,
    /// Give every take a random home position instead of the subject's
    /// fixed one.
    pub vary_home: bool,
    /// Distance in meters between neighbouring home positions.
    #[serde(default = "default_home_spacing")]
    pub home_spacing: f64,
    /// Half-width in radians of the range a take's facing is drawn from,
    /// centered on the subject's preferred facing. `PI` makes facing
    /// uninformative across takes.
    #[serde(default = "default_facing_spread")]
    pub facing_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 10,
            takes_per_subject: 3,
            seconds_per_take: 120.0,
            fps: 90.0,
            seed: 0,
            vary_home: false,
            home_spacing: 0.5,
            facing_spread: 0.25,
        }
    }
}

fn default_home_spacing() -> f64 {
    0.5
}

fn default_facing_spread() -> f64 {
    0.25
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 || self.takes_per_subject < 3 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 subjects and 3 takes per subject, got {} and {}",
                self.n_subjects, self.takes_per_subject
            )));
        }
        if !(self.fps > 0.0 && self.seconds_per_take > 0.0 && (self.fps * self.seconds_per_take) >= 2.0) {
            return Err(Error::InvalidArgument(format!(
                "fps and take duration must be positive and give at least 2 frames, got {} fps x {} s",
                self.fps, self.seconds_per_take
            )));
        }
        if !(self.home_spacing >= 0.0 && self.home_spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "home_spacing {} must be a non-negative distance",
                self.home_spacing
            )));
        }
        if !(0.0..=PI).contains(&self.facing_spread) {
            return Err(Error::InvalidArgument(format!(
                "facing_spread {} outside [0, pi]",
                self.facing_spread
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Oscillator {
    freq: f64,
    amp: Vec3,
    // Relative phase of each axis.
    phase: Vec3,
    harmonic: f64,
}

impl Oscillator {
    fn random(rng: &mut seed::Rng, freq: f64, amp: (f64, f64)) -> Self {
        Oscillator {
            freq,
            amp: Vec3::new(
                rng.random_range(amp.0..amp.1),
                rng.random_range(amp.0..amp.1),
                rng.random_range(amp.0..amp.1),
            ),
            phase: Vec3::new(
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
            ),
            harmonic: rng.random_range(0.0..0.5),
        }
    }

    fn eval(&self, t: f64, phase: f64, gain: f64) -> Vec3 {
        let w = TAU * self.freq * t + phase;
        let f = |a: f64, p: f64| a * gain * ((w + p).sin() + self.harmonic * (2.0 * (w + p)).sin());
        Vec3::new(
            f(self.amp.x, self.phase.x),
            f(self.amp.y, self.phase.y),
            f(self.amp.z, self.phase.z),
        )
    }
}

#[derive(Debug, Clone)]
struct Limb {
    rest: Vec3,
    gesture: Oscillator,
    rest_rot: UnitQuaternion,
    twist_axis: Vec3,
    twist_amp: f64,
}

#[derive(Debug, Clone)]
struct Signature {
    home: Vec3,
    facing: f64,
    head_height: f64,
    sway: Oscillator,
    pitch_rest: f64,
    roll_rest: f64,
    nod_amp: f64,
    nod_freq: f64,
    yaw_amp: f64,
    yaw_freq: f64,
    left: Limb,
    right: Limb,
    right_lag: f64,
    noise: f64,
}

fn random_unit(rng: &mut seed::Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

fn limb(rng: &mut seed::Rng, side: f64, freq: f64) -> Limb {
    let mut gesture = Oscillator::random(rng, freq, (0.01, 0.08));
    gesture.amp.y = 0.03;
    // Wrists rest pitched down, turned by a personal angle about the vertical
    // and tilted only slightly away from the common pose.
    let yaw = UnitQuaternion::from_axis_angle(UP, side * rng.random_range(-0.3..0.9));
    let pitch = UnitQuaternion::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), -0.4);
    let tilt = UnitQuaternion::from_axis_angle(random_unit(rng), rng.random_range(0.0..0.05));
    Limb {
        rest: Vec3::new(
            side * rng.random_range(0.12..0.38),
            rng.random_range(-0.48..-0.46),
            rng.random_range(0.08..0.42),
        ),
        gesture,
        rest_rot: yaw * pitch * tilt,
        twist_axis: Vec3::new(0.0, 0.0, 1.0),
        twist_amp: 0.25,
    }
}

impl Signature {
    fn random(rng: &mut seed::Rng) -> Self {
        let base_freq = rng.random_range(0.4..1.8);
        let ratio = rng.random_range(0.75..1.33);
        let sway_freq = rng.random_range(0.1..0.4);
        Signature {
            home: Vec3::ZERO,
            // Everyone roughly faces the front of the scene.
            facing: rng.random_range(-0.4..0.4),
            head_height: rng.random_range(1.66..1.70),
            sway: Oscillator::random(rng, sway_freq, (0.005, 0.02)),
            pitch_rest: rng.random_range(-0.08..-0.02),
            roll_rest: rng.random_range(-0.03..0.03),
            nod_amp: rng.random_range(0.05..0.08),
            nod_freq: rng.random_range(0.5..0.8),
            yaw_amp: rng.random_range(0.15..0.3),
            yaw_freq: rng.random_range(0.08..0.15),
            left: limb(rng, 1.0, base_freq),
            right: limb(rng, -1.0, base_freq * ratio),
            right_lag: rng.random_range(0.0..TAU),
            noise: rng.random_range(0.006..0.01),
        }
    }
}

/// Sum of a few low-frequency sinusoids with random phases per channel.
struct BandNoise {
    terms: Vec<(f64, [f64; 3], [f64; 3])>,
    scale: f64,
}

impl BandNoise {
    fn new(rng: &mut seed::Rng, level: f64) -> Self {
        const TERMS: usize = 6;
        let terms = (0..TERMS)
            .map(|_| {
                (
                    rng.random_range(0.05..1.5),
                    [rng.random_range(0.0..TAU), rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)],
                    [rng.random_range(0.5..1.0), rng.random_range(0.5..1.0), rng.random_range(0.5..1.0)],
                )
            })
            .collect();
        BandNoise {
            terms,
            scale: level / (TERMS as f64 / 2.0).sqrt(),
        }
    }

    fn eval(&self, t: f64) -> Vec3 {
        let mut v = [0.0; 3];
        for (f, p, a) in &self.terms {
            for k in 0..3 {
                v[k] += a[k] * (TAU * f * t + p[k]).sin();
            }
        }
        Vec3::new(v[0], v[1], v[2]) * self.scale
    }
}

fn render_take(sig: &Signature, cfg: &SynthConfig, subject: usize, take: usize) -> Take {
    let mut rng = seed::derived_rng(cfg.seed, &format!("synth/take/{subject}/{take}"));
    let home = if cfg.vary_home {
        Vec3::new(rng.random_range(-3.0..3.0), 0.0, rng.random_range(-3.0..3.0))
    } else {
        sig.home
    };
    let facing = sig.facing + rng.random_range(-1.0..=1.0) * cfg.facing_spread;
    let phase = rng.random_range(0.0..TAU);
    let yaw_phase = rng.random_range(0.0..TAU);
    let nod_phase = rng.random_range(0.0..TAU);
    let env_freq = rng.random_range(0.02..0.08);
    let env_phase = rng.random_range(0.0..TAU);
    // Posture and energy differ from take to take; placement relative to the
    // body does not.
    let gain = rng.random_range(0.6..1.4);
    let sway_gain = rng.random_range(0.6..1.4);
    let stance = rng.random_range(-0.04..0.04);
    let arm_lift = rng.random_range(-0.06..0.06);
    let head_noise = BandNoise::new(&mut rng, sig.noise * 0.5);
    let left_noise = BandNoise::new(&mut rng, sig.noise);
    let right_noise = BandNoise::new(&mut rng, sig.noise);
    let rot_noise = BandNoise::new(&mut rng, 0.05);
    // Slow turning sweeps the heading over the whole circle during a take.
    let turn_freq = rng.random_range(0.01..0.03);
    let turn_phase = rng.random_range(0.0..TAU);

    let n = (cfg.seconds_per_take * cfg.fps).round() as usize;
    let x_axis = Vec3::new(1.0, 0.0, 0.0);
    let z_axis = Vec3::new(0.0, 0.0, 1.0);
    let frames = (0..n)
        .map(|i| {
            let t = i as f64 / cfg.fps;
            // Activity rises and falls slowly over the take.
            let activity = gain * (0.8 + 0.2 * (TAU * env_freq * t + env_phase).sin());
            let yaw = facing
                + PI * (TAU * turn_freq * t + turn_phase).sin()
                + sig.yaw_amp * (TAU * sig.yaw_freq * t + yaw_phase).sin();
            let heading = UnitQuaternion::from_axis_angle(UP, yaw);
            let nod = sig.nod_amp * (TAU * sig.nod_freq * t + nod_phase).sin();
            let rn = rot_noise.eval(t);
            let tilt = UnitQuaternion::from_axis_angle(x_axis, sig.pitch_rest + nod + rn.x)
                * UnitQuaternion::from_axis_angle(z_axis, sig.roll_rest + rn.z);
            let head_pos = home
                + Vec3::new(0.0, sig.head_height + stance, 0.0)
                + heading.rotate(sig.sway.eval(t, phase, sway_gain) + head_noise.eval(t));
            let head = Pose::new(head_pos, heading * tilt);

            let wrist = |limb: &Limb, lag: f64, noise: &BandNoise, rot_phase: f64| {
                let local = limb.rest
                    + Vec3::new(0.0, arm_lift, 0.0)
                    + limb.gesture.eval(t, phase + lag, activity)
                    + noise.eval(t);
                let angle = limb.twist_amp * activity * (TAU * limb.gesture.freq * t + phase + lag + rot_phase).sin();
                let rot = heading * limb.rest_rot * UnitQuaternion::from_axis_angle(limb.twist_axis, angle);
                Pose::new(head_pos + heading.rotate(local), rot)
            };
            MotionFrame {
                head,
                wrist_left: wrist(&sig.left, 0.0, &left_noise, 0.3),
                wrist_right: wrist(&sig.right, sig.right_lag, &right_noise, 1.1),
            }
        })
        .collect();
    Take {
        subject_id: subject_id(subject),
        take_id: take_id(subject, take),
        fps: cfg.fps,
        frames,
    }
}

/// Subjects stand on a square grid with `home_spacing` between neighbours,
/// assigned to grid slots in a seeded order.
fn home_layout(cfg: &SynthConfig) -> Vec<Vec3> {
    let mut slots: Vec<usize> = (0..cfg.n_subjects).collect();
    slots.shuffle(&mut seed::derived_rng(cfg.seed, "synth/layout"));
    let cols = (cfg.n_subjects as f64).sqrt().ceil() as usize;
    let rows = cfg.n_subjects.div_ceil(cols);
    let (cx, cz) = ((cols as f64 - 1.0) / 2.0, (rows as f64 - 1.0) / 2.0);
    slots
        .into_iter()
        .map(|k| {
            let (c, r) = ((k % cols) as f64, (k / cols) as f64);
            Vec3::new((c - cx) * cfg.home_spacing, 0.0, (r - cz) * cfg.home_spacing)
        })
        .collect()
}

pub fn subject_id(i: usize) -> String {
    format!("s{i:02}")
}

pub fn take_id(subject: usize, take: usize) -> String {
    format!("s{subject:02}_t{take:02}")
}

/// Generates all takes, subject by subject. Identical configs give
/// bit-identical takes.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<Take>> {
    cfg.validate()?;
    let mut signatures: Vec<Signature> = (0..cfg.n_subjects)
        .map(|s| Signature::random(&mut seed::derived_rng(cfg.seed, &format!("synth/subject/{s}"))))
        .collect();
    for (sig, home) in signatures.iter_mut().zip(home_layout(cfg)) {
        sig.home = home;
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.n_subjects)
        .flat_map(|s| (0..cfg.takes_per_subject).map(move |t| (s, t)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(s, t)| render_take(&signatures[s], cfg, s, t))
        .collect())
}

/// Manifest describing `takes` stored under `<subject>/<take>.csv`.
pub fn manifest_for(takes: &[Take]) -> Manifest {
    let mut m = Manifest::default();
    for t in takes {
        m.push(
            &t.subject_id,
            TakeEntry {
                take_id: t.take_id.clone(),
                path: Path::new(&t.subject_id).join(format!("{}.csv", t.take_id)),
                fps: t.fps,
                frame_count: t.len(),
                session: None,
                two_subject_scene: true,
            },
        );
    }
    m
}

/// Writes takes and `manifest.json` into `dir`, returning the manifest.
pub fn write_dataset(dir: &Path, takes: &[Take]) -> Result<Manifest> {
    let manifest = manifest_for(takes);
    takes.par_iter().try_for_each(|t| {
        let entry = manifest.take(&t.subject_id, &t.take_id).expect("entry just added");
        io::write_take(&dir.join(&entry.path), t)
    })?;
    manifest.write(&dir.join("manifest.json"))?;
    Ok(manifest)
}
