//! Acceptance suite. Every test prints one `PASS` or `FAIL` line (written
//! straight to stdout so it shows without `--nocapture`) and then asserts.

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use xrid_core::dataset::{filter_and_split, movement_score, FilterPolicy};
use xrid_core::encoding::{self, EncoderConfig};
use xrid_core::eval;
use xrid_core::models::nn::{Arch, Cell, Network};
use xrid_core::models::train::batch_gradient;
use xrid_core::models::{MlpConfig, ModelConfig, RfConfig, RnnConfig, TrainConfig};
use xrid_core::pipeline::{self, RunSpec, SplitTakes};
use xrid_core::sampling::{self, BIN_STATS};
use xrid_core::synth::{self, SynthConfig};
use xrid_core::{seed, DataParams, EncodingKind, MotionFrame, Pose, Take, TrainedModel, UnitQuaternion, Vec3};

fn verdict(criterion: u32, name: &str, pass: bool, detail: &str, elapsed: Duration) {
    let line = format!(
        "criterion {criterion} [{name}]: {} ({detail}; {:.1} s)\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
}

// ---------------------------------------------------------------- 1

fn random_rotation(rng: &mut seed::Rng) -> UnitQuaternion {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if let Ok(q) = UnitQuaternion::new(v[0], v[1], v[2], v[3]) {
            return q;
        }
    }
}

/// Head orientations stay within human range (heading anywhere, tilt up to
/// 60 degrees); wrists are unconstrained.
fn random_take(i: u64) -> Take {
    let mut rng = seed::derived_rng(i, "acceptance/take");
    let n = rng.random_range(10..40);
    let frames = (0..n)
        .map(|_| {
            let heading = UnitQuaternion::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), rng.random_range(-3.2..3.2));
            let axis = Vec3::new(rng.random_range(-1.0..1.0), 0.0, rng.random_range(-1.0..1.0));
            let tilt = match axis.norm() {
                l if l > 1e-3 => UnitQuaternion::from_axis_angle(axis * (1.0 / l), rng.random_range(-1.05..1.05)),
                _ => UnitQuaternion::IDENTITY,
            };
            let mut pos = || Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(0.5..2.0), rng.random_range(-3.0..3.0));
            let (h, l, r) = (pos(), pos(), pos());
            MotionFrame {
                head: Pose::new(h, heading * tilt),
                wrist_left: Pose::new(l, random_rotation(&mut rng)),
                wrist_right: Pose::new(r, random_rotation(&mut rng)),
            }
        })
        .collect();
    Take::new("s", format!("t{i}"), 90.0, frames).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_1_encoding_invariance() {
    let start = Instant::now();
    let enc = EncoderConfig::default();
    let (mut worst_body, mut least_sr) = (0.0f64, f64::INFINITY);
    for i in 0..100 {
        let take = random_take(i);
        let mut rng = seed::derived_rng(i, "acceptance/transform");
        let yaw = rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI);
        let (dx, dz) = (rng.random_range(-10.0..=10.0), rng.random_range(-10.0..=10.0));
        let moved = encoding::rigid_transform(&take, yaw, dx, dz);
        for kind in [EncodingKind::Br, EncodingKind::Brv] {
            let a = encoding::encode(&take, kind, &enc).unwrap();
            let b = encoding::encode(&moved, kind, &enc).unwrap();
            worst_body = worst_body.max(max_abs_diff(&a.values, &b.values));
        }
        let a = encoding::encode(&take, EncodingKind::Sr, &enc).unwrap();
        let b = encoding::encode(&moved, EncodingKind::Sr, &enc).unwrap();
        least_sr = least_sr.min(max_abs_diff(&a.values, &b.values));
    }
    let elapsed = start.elapsed();
    let pass = worst_body <= 1e-6 && least_sr > 1e-6 && elapsed < Duration::from_secs(60);
    let detail = format!("max BR/BRV deviation {worst_body:.2e} <= 1e-6, smallest SR change {least_sr:.2e}");
    verdict(1, "encoding invariance", pass, &detail, elapsed);
    assert!(pass, "{detail}");
}

// ---------------------------------------------------------------- 2

fn mean_loss(arch: &Arch, params: &[f64], xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let net = Network::new(arch, params);
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z = net.logits(x);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        total += m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() - z[y];
    }
    total / xs.len() as f64
}

fn gradient_error(arch: &Arch, draw: u64) -> f64 {
    const EPS: f64 = 1e-5;
    let mut rng = seed::derived_rng(draw, "acceptance/gradcheck");
    let params: Vec<f64> = (0..arch.param_count()).map(|_| rng.random_range(-0.6..0.6)).collect();
    let len = match *arch {
        Arch::Mlp { input, .. } => input,
        Arch::Rnn { input, .. } => 5 * input,
    };
    let xs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..len).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let ys: Vec<usize> = (0..3).map(|_| rng.random_range(0..arch.classes())).collect();
    let (_, analytic) = batch_gradient(arch, &params, &xs.concat(), &ys, len, &[0, 1, 2], None);
    let mut p = params;
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + EPS;
        let up = mean_loss(arch, &p, &xs, &ys);
        p[i] = orig - EPS;
        let down = mean_loss(arch, &p, &xs, &ys);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * EPS);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn criterion_2_gradient_checks() {
    let start = Instant::now();
    let rnn = |cell| Arch::Rnn {
        cell,
        input: 3,
        hidden: 8,
        layers: 2,
        classes: 4,
    };
    let archs = [
        (
            "mlp",
            Arch::Mlp {
                input: 5,
                layers: 2,
                size: 8,
                classes: 4,
            },
        ),
        ("frnn", rnn(Cell::Frnn)),
        ("lstm", rnn(Cell::Lstm)),
        ("gru", rnn(Cell::Gru)),
    ];
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for (name, arch) in &archs {
        let e = (0..20).map(|d| gradient_error(arch, d)).fold(0.0, f64::max);
        worst = worst.max(e);
        parts.push(format!("{name} {e:.1e}"));
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-4 && elapsed < Duration::from_secs(300);
    let detail = format!("max relative error {} (limit 1e-4)", parts.join(", "));
    verdict(2, "gradient checks", pass, &detail, elapsed);
    assert!(pass, "{detail}");
}

// ---------------------------------------------------------------- 3

/// Column statistics recomputed the obvious way.
fn brute_force_stats(rows: &[f64], width: usize) -> Vec<f64> {
    let n = rows.len() / width;
    let mut out = Vec::new();
    for f in 0..width {
        let col: Vec<f64> = (0..n).map(|t| rows[t * width + f]).collect();
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in &col {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        let mean = sum / n as f64;
        let mut sq = 0.0;
        for &v in &col {
            sq += (v - mean) * (v - mean);
        }
        let mut sorted = col.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        out.extend([min, max, mean, median, (sq / n as f64).sqrt()]);
    }
    out
}

#[test]
fn criterion_3_binned_statistics() {
    let start = Instant::now();
    let mut mismatches = 0;
    for i in 0..200 {
        let mut rng = seed::derived_rng(i, "acceptance/chunk");
        let width = if i % 2 == 0 { 18 } else { 21 };
        let n = rng.random_range(2..=400);
        let rows: Vec<f64> = (0..n * width).map(|_| rng.random_range(-5.0..5.0)).collect();
        let got = sampling::bin_statistics(&rows, width);
        let want = brute_force_stats(&rows, width);
        if got.len() != want.len() || got.iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
            mismatches += 1;
        }
    }
    let shape = |kind| DataParams::BINNED_ONE_SECOND.sample_shape(kind);
    let (sr, br) = (shape(EncodingKind::Sr), shape(EncodingKind::Br));
    let elapsed = start.elapsed();
    let pass = mismatches == 0
        && BIN_STATS.len() == 5
        && sr == (1, 105)
        && br == (1, 90)
        && elapsed < Duration::from_secs(10);
    let detail = format!(
        "{mismatches}/200 chunks differ bitwise; SR width {}, BR width {} (want 105, 90)",
        sr.1, br.1
    );
    verdict(3, "binned statistics", pass, &detail, elapsed);
    assert!(pass, "{detail}");
}

// ---------------------------------------------------------------- 4 and 5

struct Fixture {
    takes: SplitTakes,
    /// Body-relative models with their names, in training order.
    models: Vec<(&'static str, TrainedModel)>,
    train_time: Duration,
}

const BINNED: DataParams = DataParams::Binned { frames_per_bin: 90 };
const WINDOWED: DataParams = DataParams::Windowed {
    fps_target: 30.0,
    window_size: 100,
};

fn train_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 60,
        batch_size: 64,
        patience: Some(15),
        seed: seed::derive_seed(7, "train"),
        ..TrainConfig::default()
    }
}

fn spec(name: &str, encoding: EncodingKind) -> RunSpec {
    let model_seed = seed::derive_seed(7, &format!("model/{name}"));
    let rnn = |cell| {
        ModelConfig::Rnn(RnnConfig {
            cell,
            hidden_size: 32,
            layers: 1,
            dropout: 0.0,
            learning_rate: 5e-3,
            seed: model_seed,
        })
    };
    let (model, data, train_stride) = match name {
        "rf" => (
            ModelConfig::Rf(RfConfig {
                n_estimators: 100,
                min_samples_leaf: 1,
                seed: model_seed,
            }),
            BINNED,
            None,
        ),
        "mlp" => (
            ModelConfig::Mlp(MlpConfig {
                layers: 2,
                layer_size: 64,
                learning_rate: 3e-3,
                seed: model_seed,
            }),
            BINNED,
            Some(25),
        ),
        "lstm" => (rnn(Cell::Lstm), WINDOWED, Some(25)),
        "gru" => (rnn(Cell::Gru), WINDOWED, Some(25)),
        _ => unreachable!(),
    };
    RunSpec {
        encoding,
        data,
        model,
        train: train_config(),
        train_stride,
    }
}

/// Ten synthetic subjects with fixed homes, three 120 s takes each at 90 fps.
fn synthetic_split() -> SplitTakes {
    let cfg = SynthConfig {
        seed: 7,
        ..SynthConfig::default()
    };
    assert_eq!((cfg.n_subjects, cfg.takes_per_subject, cfg.seconds_per_take, cfg.fps), (10, 3, 120.0, 90.0));
    let takes = synth::synth_generate(&cfg).unwrap();
    let manifest = synth::manifest_for(&takes);
    let policy = FilterPolicy {
        min_take_seconds: 60.0,
        ..FilterPolicy::default()
    };
    let split = filter_and_split(&manifest, &policy, |s, e| {
        let t = takes.iter().find(|t| t.subject_id == s && t.take_id == e.take_id).unwrap();
        Ok(movement_score(t))
    })
    .unwrap();
    SplitTakes::from_takes(&split, &takes).unwrap()
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let takes = synthetic_split();
        let start = Instant::now();
        let enc = EncoderConfig::default();
        let models = [
            ("rf", EncodingKind::Br),
            ("mlp", EncodingKind::Br),
            ("lstm", EncodingKind::Brv),
            ("gru", EncodingKind::Brv),
        ]
        .into_iter()
        .map(|(name, kind)| (name, pipeline::train_on_split(&spec(name, kind), &takes, &enc).unwrap().0))
        .collect();
        Fixture {
            takes,
            models,
            train_time: start.elapsed(),
        }
    })
}

#[test]
fn criterion_4_synthetic_identification() {
    let start = Instant::now();
    let fx = fixture();
    let enc = EncoderConfig::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, model) in &fx.models {
        let lengths = eval::default_lengths(model.data.duration_seconds(90.0), 60.0);
        let ev = pipeline::evaluate(model, &fx.takes.test, &enc, &lengths, 1.0, None).unwrap();
        let full = ev.curve.first_reaching(1.0);
        pass &= ev.report.mean_accuracy >= 0.95 && full.is_some_and(|s| s <= 60.0);
        parts.push(format!(
            "{name}+{} MeanAcc {:.3}, 100% vote at {}",
            model.encoding,
            ev.report.mean_accuracy,
            full.map_or("never".to_string(), |s| format!("{s} s"))
        ));
    }
    let elapsed = start.elapsed().max(fx.train_time);
    pass &= elapsed < Duration::from_secs(45 * 60);
    let detail = format!("{} (need >= 0.95 and <= 60 s)", parts.join("; "));
    verdict(4, "synthetic identification", pass, &detail, elapsed);
    assert!(pass, "{detail}");
}

fn predictions(model: &TrainedModel, takes: &[Take]) -> Vec<Vec<f64>> {
    let set = pipeline::build_samples(takes, model.encoding, &model.data, &EncoderConfig::default(), None).unwrap();
    let predictor = model.predictor().unwrap();
    set.samples.iter().map(|s| predictor.predict_proba(&s.values).unwrap()).collect()
}

#[test]
fn criterion_5_sr_offset_collapse() {
    let start = Instant::now();
    let fx = fixture();
    let enc = EncoderConfig::default();
    let shifted: Vec<Take> = fx.takes.test.iter().map(|t| eval::sr_offset(t, 0.5, 0.5)).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["rf", "mlp"] {
        let (model, _) = pipeline::train_on_split(&spec(name, EncodingKind::Sr), &fx.takes, &enc).unwrap();
        let score = |takes: &[Take]| {
            let set = pipeline::build_samples(takes, EncodingKind::Sr, &model.data, &enc, None).unwrap();
            eval::score_samples(&model, &set).unwrap().mean_accuracy
        };
        let (clean, moved) = (score(&fx.takes.test), score(&shifted));
        pass &= moved <= 0.20;
        parts.push(format!("{name}+sr {clean:.3} -> {moved:.3}"));
    }
    // Predicted labels must match exactly; probabilities may move in the
    // last bits because translating and re-subtracting positions rounds.
    for (name, model) in &fx.models {
        let (a, b) = (predictions(model, &fx.takes.test), predictions(model, &shifted));
        let same = a.len() == b.len() && a.iter().zip(&b).all(|(p, q)| eval::argmax(p) == eval::argmax(q));
        let drift = a.iter().flatten().zip(b.iter().flatten()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        pass &= same;
        parts.push(format!(
            "{name}+{} labels {} (max probability drift {drift:.1e})",
            model.encoding,
            if same { "unchanged" } else { "CHANGED" }
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(30 * 60);
    let detail = format!("{} (SR MeanAcc after offset must be <= 0.20)", parts.join("; "));
    verdict(5, "SR offset collapse", pass, &detail, elapsed);
    assert!(pass, "{detail}");
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_majority_vote_statistics() {
    let start = Instant::now();
    const TRIALS: usize = 100_000;
    let votes = [1, 5, 15, 51];
    let acc: Vec<f64> = votes.iter().map(|&v| eval::simulate_voting(0.5, 34, v, TRIALS, 6)).collect();
    let se = |p: f64| (p * (1.0 - p) / TRIALS as f64).sqrt();
    let monotone = acc
        .windows(2)
        .all(|w| w[1] >= w[0] - 3.0 * (se(w[0]).powi(2) + se(w[1]).powi(2)).sqrt());
    let elapsed = start.elapsed();
    let pass = acc[3] >= 0.99 && monotone && elapsed < Duration::from_secs(60);
    let detail = format!(
        "voted accuracy {} (51 votes must reach 0.99, non-decreasing within 3 standard errors)",
        votes.iter().zip(&acc).map(|(v, a)| format!("{v}: {a:.4}")).collect::<Vec<_>>().join(", ")
    );
    verdict(6, "majority vote statistics", pass, &detail, elapsed);
    assert!(pass, "{detail}");
}

// ---------------------------------------------------------------- 7

fn xrid(workdir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_xrid"))
        .args(args)
        .env("XRID_WORKDIR", workdir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "xrid {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn run_pipeline(workdir: &Path, jobs: &str) {
    xrid(workdir, &["--jobs", jobs, "synth", "--subjects", "5", "--seconds", "40", "--seed", "11"]);
    xrid(workdir, &["split", "--min-take-seconds", "20"]);
    xrid(workdir, &["--jobs", jobs, "encode", "--kind", "br"]);
    xrid(
        workdir,
        &[
            "--jobs",
            jobs,
            "train",
            "--family",
            "lstm",
            "--encoding",
            "br",
            "--fps",
            "30",
            "--window",
            "100",
            "--hidden-size",
            "20",
            "--layers",
            "1",
            "--epochs",
            "8",
            "--seed",
            "11",
        ],
    );
    xrid(workdir, &["--jobs", jobs, "eval", "--max-seconds", "20", "--offset", "0.5", "0.5"]);
}

#[test]
fn criterion_7_determinism() {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path(), "1");
    run_pipeline(b.path(), "2");
    let files = [
        "split.json",
        "data/manifest.json",
        "features/br/s00/s00_t00.csv",
        "model.json",
        "model.log.json",
        "eval/report.json",
        "eval/vote_curve.csv",
        "eval/offset_report.json",
        "eval/summary.json",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .collect();
    let elapsed = start.elapsed();
    let pass = differing.is_empty() && elapsed < Duration::from_secs(20 * 60);
    let detail = if differing.is_empty() {
        format!("{} artifacts byte-identical across two runs (1 and 2 worker threads)", files.len())
    } else {
        format!("differing: {}", differing.join(", "))
    };
    verdict(7, "determinism", pass, &detail, elapsed);
    assert!(pass, "{detail}");
}
