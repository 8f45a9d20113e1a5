use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xrid_core::bvh::{self, AxisMap, ThreePointConfig};
use xrid_core::dataset::{self, DatasetSplit, FilterPolicy, Role};
use xrid_core::encoding::{self, EncoderConfig};
use xrid_core::eval::{self, EvalReport};
use xrid_core::hpo::{self, Combination, Stage, StudyResult};
use xrid_core::io::{self, Manifest};
use xrid_core::models::{Family, ModelConfig, TrainedModel};
use xrid_core::pipeline::{self, SplitTakes};
use xrid_core::seed::derive_seed;
use xrid_core::synth::{self, SynthConfig};
use xrid_core::{DataParams, EncodingKind};

use crate::config::{RunConfig, CONFIG_VERSION};
use crate::{parse_kind, Ctx, DataArgs};

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_manifest_split(ctx: &Ctx, data: &DataArgs) -> Result<(Manifest, PathBuf, DatasetSplit)> {
    let manifest_path = ctx.path(&data.manifest);
    let manifest = Manifest::read(&manifest_path)?;
    let split = DatasetSplit::read(&ctx.path(&data.split))?;
    Ok((manifest, parent_dir(&manifest_path), split))
}

fn load_split_takes(ctx: &Ctx, data: &DataArgs) -> Result<SplitTakes> {
    let (manifest, base, split) = load_manifest_split(ctx, data)?;
    Ok(pipeline::load_split(&manifest, &base, &split)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    io::write_json(path, value)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Directory laid out as `<subject>/<take>.bvh` or
    /// `<subject>/<session>/<take>.bvh`.
    #[arg(long)]
    bvh_dir: PathBuf,
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long, default_value = "b_head")]
    head: String,
    #[arg(long, default_value = "b_l_wrist_twist")]
    left: String,
    #[arg(long, default_value = "b_r_wrist_twist")]
    right: String,
    /// Multiplier from file units to meters.
    #[arg(long, default_value_t = 0.01)]
    unit_scale: f64,
    /// Axis remapping into the y-up frame, e.g. `x,-z,y`.
    #[arg(long, default_value = "x,y,z")]
    axes: String,
    /// File listing `subject/take` lines recorded without a second subject
    /// in the scene; all other takes count as two-subject scenes.
    #[arg(long)]
    single_subject: Option<PathBuf>,
}

pub fn import(ctx: &Ctx, a: ImportArgs) -> Result<()> {
    let cfg = ThreePointConfig {
        head: a.head,
        left: a.left,
        right: a.right,
        unit_scale: a.unit_scale,
        axes: a.axes.parse::<AxisMap>()?,
    };
    let single: HashSet<String> = match &a.single_subject {
        Some(p) => io::read_to_string(&ctx.path(p))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect(),
        None => HashSet::new(),
    };
    let out = ctx.path(&a.out);
    let manifest = bvh::import_dir(&ctx.path(&a.bvh_dir), &out, &cfg, |src| {
        !single.contains(&format!("{}/{}", src.subject_id, src.take_id))
    })?;
    let takes: usize = manifest.subjects.iter().map(|s| s.takes.len()).sum();
    println!(
        "imported {takes} takes of {} subjects into {}",
        manifest.subjects.len(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    #[arg(long, default_value_t = 3)]
    takes: usize,
    #[arg(long, default_value_t = 120.0)]
    seconds: f64,
    #[arg(long, default_value_t = 90.0)]
    fps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Draw a fresh home position for every take.
    #[arg(long)]
    vary_home: bool,
    /// Meters between neighbouring home positions.
    #[arg(long)]
    home_spacing: Option<f64>,
    /// Half-width in radians of the per-take facing range.
    #[arg(long)]
    facing_spread: Option<f64>,
}

pub fn synth(ctx: &Ctx, a: SynthArgs) -> Result<()> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        n_subjects: a.subjects,
        takes_per_subject: a.takes,
        seconds_per_take: a.seconds,
        fps: a.fps,
        seed: a.seed,
        vary_home: a.vary_home,
        home_spacing: a.home_spacing.unwrap_or(defaults.home_spacing),
        facing_spread: a.facing_spread.unwrap_or(defaults.facing_spread),
    };
    let takes = synth::synth_generate(&cfg)?;
    let out = ctx.path(&a.out);
    synth::write_dataset(&out, &takes)?;
    write_json(&out.join("synth.json"), &cfg)?;
    println!("wrote {} takes of {} subjects to {}", takes.len(), cfg.n_subjects, out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long, default_value = "data/manifest.json")]
    manifest: PathBuf,
    #[arg(long, default_value = "split.json")]
    out: PathBuf,
    /// Shortest usable take in seconds.
    #[arg(long)]
    min_take_seconds: Option<f64>,
    /// Minimum positional standard deviation in meters.
    #[arg(long)]
    movement_threshold: Option<f64>,
    #[arg(long)]
    min_takes: Option<usize>,
}

pub fn split(ctx: &Ctx, a: SplitArgs) -> Result<()> {
    let d = FilterPolicy::default();
    let policy = FilterPolicy {
        min_take_seconds: a.min_take_seconds.unwrap_or(d.min_take_seconds),
        movement_threshold: a.movement_threshold.unwrap_or(d.movement_threshold),
        min_takes_per_subject: a.min_takes.unwrap_or(d.min_takes_per_subject),
    };
    let manifest_path = ctx.path(&a.manifest);
    let manifest = Manifest::read(&manifest_path)?;
    let split = dataset::filter_and_split_files(&manifest, &parent_dir(&manifest_path), &policy)?;
    split.write(&ctx.path(&a.out))?;
    println!(
        "{} subjects: {} train, {} validation, {} test takes",
        split.subjects().len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoleArg {
    Train,
    Validation,
    Test,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Role {
        match r {
            RoleArg::Train => Role::Train,
            RoleArg::Validation => Role::Validation,
            RoleArg::Test => Role::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_kind)]
    kind: EncodingKind,
    /// Feature files go to `<out>/<kind>/<subject>/<take>.csv`.
    #[arg(long, default_value = "features")]
    out: PathBuf,
}

pub fn encode(ctx: &Ctx, a: EncodeArgs) -> Result<()> {
    let (manifest, base, split) = load_manifest_split(ctx, &a.data)?;
    let refs: Vec<_> = split.records();
    let out = ctx.path(&a.out).join(a.kind.as_str());
    let enc = EncoderConfig::default();
    refs.par_iter().try_for_each(|r| -> Result<()> {
        let entry = manifest
            .take(&r.subject_id, &r.take_id)
            .with_context(|| format!("take {}/{} is not in the manifest", r.subject_id, r.take_id))?;
        let take = io::read_take(&io::resolve(&base, &entry.path))?;
        let seq = encoding::encode(&take, a.kind, &enc)?;
        seq.write(&out.join(&r.subject_id).join(format!("{}.csv", r.take_id)))?;
        Ok(())
    })?;
    println!("encoded {} takes as {} into {}", refs.len(), a.kind, out.display());
    Ok(())
}

/// Sample-shape flags; binned unless a window is given.
#[derive(Debug, Clone, Args)]
struct ShapeArgs {
    #[arg(long, conflicts_with_all = ["fps", "window"])]
    frames_per_bin: Option<usize>,
    #[arg(long, requires = "window")]
    fps: Option<f64>,
    #[arg(long, requires = "fps")]
    window: Option<usize>,
}

impl ShapeArgs {
    fn params(&self) -> Option<DataParams> {
        match (self.frames_per_bin, self.fps, self.window) {
            (Some(frames_per_bin), _, _) => Some(DataParams::Binned { frames_per_bin }),
            (None, Some(fps_target), Some(window_size)) => Some(DataParams::Windowed {
                fps_target,
                window_size,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_kind)]
    kind: EncodingKind,
    #[arg(long, value_enum, default_value = "train")]
    role: RoleArg,
    #[command(flatten)]
    shape: ShapeArgs,
    /// Rows between sample starts; non-overlapping by default.
    #[arg(long)]
    stride: Option<usize>,
    /// Defaults to `samples/<kind>-<role>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn sample(ctx: &Ctx, a: SampleArgs) -> Result<()> {
    let params = a.shape.params().unwrap_or(DataParams::BINNED_ONE_SECOND);
    let (manifest, base, split) = load_manifest_split(ctx, &a.data)?;
    let role = Role::from(a.role);
    let takes = pipeline::load_takes(&manifest, &base, split.role(role))?;
    let set = pipeline::build_samples(&takes, a.kind, &params, &EncoderConfig::default(), a.stride)?;
    let out = ctx.path(&a.out.unwrap_or_else(|| {
        PathBuf::from("samples").join(format!("{}-{}.csv", a.kind, format!("{role:?}").to_lowercase()))
    }));
    set.write(&out)?;
    println!("wrote {} samples to {}", set.len(), out.display());
    Ok(())
}

/// Flags overriding values of a [`RunConfig`].
#[derive(Debug, Args)]
struct Overrides {
    #[arg(long)]
    family: Option<Family>,
    #[arg(long, value_parser = parse_kind)]
    encoding: Option<EncodingKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    shape: ShapeArgs,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    train_stride: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    hidden_size: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    layer_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    n_estimators: Option<usize>,
    #[arg(long)]
    min_samples_leaf: Option<usize>,
}

fn not_for(flag: &str, family: Family) -> anyhow::Error {
    anyhow::anyhow!("--{flag} does not apply to {family} models")
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(f) = self.family {
            if cfg.model.family() != f {
                cfg.model = ModelConfig::default_for(f);
                if cfg.model.check_data(&cfg.data).is_err() {
                    cfg.data = RunConfig::for_family(f).data;
                }
            }
        }
        if let Some(e) = self.encoding {
            cfg.encoding = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.shape.params() {
            cfg.data = d;
        }
        if let Some(v) = self.epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.patience {
            cfg.train.patience = Some(v);
        }
        if let Some(v) = self.train_stride {
            cfg.train_stride = Some(v);
        }
        let family = cfg.model.family();
        match &mut cfg.model {
            ModelConfig::Rf(c) => {
                if let Some(v) = self.n_estimators {
                    c.n_estimators = v;
                }
                if let Some(v) = self.min_samples_leaf {
                    c.min_samples_leaf = v;
                }
                for (flag, set) in [
                    ("learning-rate", self.learning_rate.is_some()),
                    ("hidden-size", self.hidden_size.is_some()),
                    ("layers", self.layers.is_some()),
                    ("layer-size", self.layer_size.is_some()),
                    ("dropout", self.dropout.is_some()),
                ] {
                    if set {
                        return Err(not_for(flag, family));
                    }
                }
            }
            ModelConfig::Mlp(c) => {
                if let Some(v) = self.learning_rate {
                    c.learning_rate = v;
                }
                if let Some(v) = self.layers {
                    c.layers = v;
                }
                if let Some(v) = self.layer_size {
                    c.layer_size = v;
                }
                for (flag, set) in [
                    ("hidden-size", self.hidden_size.is_some()),
                    ("dropout", self.dropout.is_some()),
                    ("n-estimators", self.n_estimators.is_some()),
                    ("min-samples-leaf", self.min_samples_leaf.is_some()),
                ] {
                    if set {
                        return Err(not_for(flag, family));
                    }
                }
            }
            ModelConfig::Rnn(c) => {
                if let Some(v) = self.learning_rate {
                    c.learning_rate = v;
                }
                if let Some(v) = self.layers {
                    c.layers = v;
                }
                if let Some(v) = self.hidden_size {
                    c.hidden_size = v;
                }
                if let Some(v) = self.dropout {
                    c.dropout = v;
                }
                for (flag, set) in [
                    ("layer-size", self.layer_size.is_some()),
                    ("n-estimators", self.n_estimators.is_some()),
                    ("min-samples-leaf", self.min_samples_leaf.is_some()),
                ] {
                    if set {
                        return Err(not_for(flag, family));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Run configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
}

fn log_path(model: &Path) -> PathBuf {
    model.with_extension("log.json")
}

pub fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::read(&ctx.path(p))?,
        None => RunConfig::for_family(a.overrides.family.unwrap_or(Family::Lstm)),
    };
    a.overrides.apply(&mut cfg)?;
    cfg.validate()?;
    let takes = load_split_takes(ctx, &a.data)?;
    let (model, log) = pipeline::train_on_split(&cfg.spec(), &takes, &EncoderConfig::default())?;
    let out = ctx.path(&a.out);
    model.save(&out)?;
    write_json(&log_path(&out), &log)?;
    write_json(&out.with_extension("config.json"), &cfg)?;
    println!(
        "{} {}: best epoch {} of {}, validation mean {:.4} min {:.4} ({})",
        model.family,
        model.encoding,
        log.best_epoch,
        log.epochs.len().max(1),
        model.snapshot.validation_mean_accuracy,
        model.snapshot.validation_min_accuracy,
        log.stop_reason
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "model.json")]
    model: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "eval")]
    out: PathBuf,
    /// Also evaluate with every test take shifted by (DX, DZ) meters.
    #[arg(long, num_args = 2, value_names = ["DX", "DZ"], allow_negative_numbers = true)]
    offset: Option<Vec<f64>>,
    /// Longest voted sequence in seconds.
    #[arg(long, default_value_t = 60.0)]
    max_seconds: f64,
    /// Seconds between voted sequence placements.
    #[arg(long, default_value_t = 1.0)]
    stride_seconds: f64,
}

/// Headline numbers of one evaluation, read back by `report`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub version: u32,
    pub family: Family,
    pub encoding: EncodingKind,
    pub data: DataParams,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    /// Shortest voted sequence reaching 100% take-level accuracy.
    pub full_accuracy_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<OffsetSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetSummary {
    pub dx: f64,
    pub dz: f64,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
}

pub fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    if !(a.max_seconds > 0.0 && a.stride_seconds > 0.0) {
        bail!("--max-seconds and --stride-seconds must be positive");
    }
    let offset = match a.offset.as_deref() {
        Some(&[dx, dz]) if dx.is_finite() && dz.is_finite() => Some((dx, dz)),
        Some(_) => bail!("--offset needs two finite numbers"),
        None => None,
    };
    let model = TrainedModel::load(&ctx.path(&a.model))?;
    let takes = load_split_takes(ctx, &a.data)?;
    let enc = EncoderConfig::default();
    let source_fps = takes.test.first().map(|t| t.fps).context("split has no test takes")?;
    let lengths = eval::default_lengths(model.data.duration_seconds(source_fps), a.max_seconds);
    let out = ctx.path(&a.out);

    let clean = pipeline::evaluate(&model, &takes.test, &enc, &lengths, a.stride_seconds, None)?;
    clean.report.write(&out.join("report.json"))?;
    clean.curve.write_csv(&out.join("vote_curve.csv"))?;
    println!(
        "{} {}: mean {:.4} min {:.4}",
        model.family, model.encoding, clean.report.mean_accuracy, clean.report.min_accuracy
    );
    let mut summary = EvalSummary {
        version: CONFIG_VERSION,
        family: model.family,
        encoding: model.encoding,
        data: model.data,
        mean_accuracy: clean.report.mean_accuracy,
        min_accuracy: clean.report.min_accuracy,
        full_accuracy_seconds: clean.curve.first_reaching(1.0),
        offset: None,
    };
    if let Some((dx, dz)) = offset {
        let shifted = pipeline::evaluate(&model, &takes.test, &enc, &lengths, a.stride_seconds, Some((dx, dz)))?;
        shifted.report.write(&out.join("offset_report.json"))?;
        shifted.curve.write_csv(&out.join("offset_vote_curve.csv"))?;
        println!(
            "offset ({dx}, {dz}): mean {:.4} min {:.4}",
            shifted.report.mean_accuracy, shifted.report.min_accuracy
        );
        summary.offset = Some(OffsetSummary {
            dx,
            dz,
            mean_accuracy: shifted.report.mean_accuracy,
            min_accuracy: shifted.report.min_accuracy,
        });
    }
    write_json(&out.join("summary.json"), &summary)
}

#[derive(Debug, Args)]
pub struct HpoArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Architecture and encoding, e.g. `lstm+br`.
    #[arg(long)]
    combination: String,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    stage: u8,
    /// Stage-one trials.
    #[arg(long, default_value_t = 100)]
    budget: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stage-one winner to refine in stage two; defaults to the stage-one
    /// winner file of the combination.
    #[arg(long)]
    best_config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Trial log; an existing log is resumed.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Run configuration of the best trial.
    #[arg(long)]
    winner: Option<PathBuf>,
}

fn default_hpo_path(combination: &Combination, stage: u8, suffix: &str) -> PathBuf {
    PathBuf::from("hpo").join(format!("{}-{}-stage{stage}{suffix}", combination.family, combination.encoding))
}

pub fn hpo(ctx: &Ctx, a: HpoArgs) -> Result<()> {
    let combination: Combination = a.combination.parse()?;
    let mut base = RunConfig::for_family(combination.family);
    base.seed = a.seed;
    base.encoding = combination.encoding;
    if let Some(v) = a.epochs {
        base.train.max_epochs = v;
    }
    if let Some(v) = a.batch_size {
        base.train.batch_size = v;
    }
    base.train.patience = a.patience.or(base.train.patience);
    base.train.seed = derive_seed(a.seed, "train");
    base.train.validate()?;

    let stage1_winner = ctx.path(&default_hpo_path(&combination, 1, "-best.json"));
    let best_config = match a.stage {
        1 => None,
        _ => {
            let path = a.best_config.as_ref().map(|p| ctx.path(p)).unwrap_or(stage1_winner);
            let cfg = RunConfig::read(&path).context("stage 2 needs the stage-one winner")?;
            Some(cfg.model)
        }
    };
    let log = ctx.path(&a.log.unwrap_or_else(|| default_hpo_path(&combination, a.stage, ".jsonl")));
    let winner = ctx.path(&a.winner.unwrap_or_else(|| default_hpo_path(&combination, a.stage, "-best.json")));

    let takes = load_split_takes(ctx, &a.data)?;
    let enc = EncoderConfig::default();
    let train_cfg = base.train.clone();
    let mut objective = pipeline::search_objective(&takes, combination.encoding, &train_cfg, &enc);
    let study = match &best_config {
        None => hpo::stage1(combination, a.budget, a.seed, &mut objective, Some(&log))?,
        Some(cfg) => hpo::stage2(combination, cfg, a.seed, &mut objective, Some(&log))?,
    };
    let completed = study.trials.iter().filter(|t| t.objective.is_some()).count();
    let Some(best) = study.best() else {
        bail!("no trial of {combination} completed; see {}", log.display());
    };
    let cfg = RunConfig {
        data: best.data,
        model: best.config.clone(),
        ..base
    };
    write_json(&winner, &cfg)?;
    println!(
        "{combination} stage {}: {completed}/{} trials completed, best trial {} with validation min accuracy {:.4}",
        a.stage,
        study.trials.len(),
        best.index,
        best.score()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation output directories (holding `summary.json`).
    #[arg(long = "eval", num_args = 1..)]
    evals: Vec<PathBuf>,
    /// Search logs.
    #[arg(long = "hpo", num_args = 1..)]
    logs: Vec<PathBuf>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// Markdown tables: architecture rows, encoding columns, each cell
/// `MeanAcc / MinAcc` in percent; offset results and search winners follow.
pub fn render_report(summaries: &[EvalSummary], studies: &[StudyResult]) -> String {
    let mut out = String::new();
    let encodings = [EncodingKind::Sr, EncodingKind::Br, EncodingKind::Brv];
    let cell = |f: Family, e: EncodingKind, offset: bool| -> String {
        summaries
            .iter()
            .filter(|s| s.family == f && s.encoding == e)
            .filter_map(|s| match (offset, &s.offset) {
                (false, _) => Some((s.mean_accuracy, s.min_accuracy)),
                (true, Some(o)) => Some((o.mean_accuracy, o.min_accuracy)),
                (true, None) => None,
            })
            .map(|(m, n)| format!("{} / {}", pct(m), pct(n)))
            .next_back()
            .unwrap_or_else(|| "-".into())
    };
    let table = |out: &mut String, title: &str, offset: bool| {
        let _ = writeln!(out, "## {title}\n");
        let _ = writeln!(out, "| model | SR | BR | BRV |");
        let _ = writeln!(out, "|---|---|---|---|");
        for f in Family::ALL {
            let cells: Vec<String> = encodings.iter().map(|&e| cell(f, e, offset)).collect();
            if cells.iter().all(|c| c == "-") {
                continue;
            }
            let _ = writeln!(out, "| {f} | {} |", cells.join(" | "));
        }
        out.push('\n');
    };
    if !summaries.is_empty() {
        table(&mut out, "Test accuracy (mean / min, %)", false);
        if summaries.iter().any(|s| s.offset.is_some()) {
            table(&mut out, "Shifted test accuracy (mean / min, %)", true);
        }
    }
    if !studies.is_empty() {
        let _ = writeln!(out, "## Search\n");
        let _ = writeln!(out, "| combination | stage | trials | completed | best trial | validation min % |");
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        for s in studies {
            let completed = s.trials.iter().filter(|t| t.objective.is_some()).count();
            let (idx, score) = s
                .best()
                .map(|b| (b.index.to_string(), pct(b.score())))
                .unwrap_or(("-".into(), "-".into()));
            let stage = match s.stage {
                Stage::Stage1 => 1,
                Stage::Stage2 => 2,
            };
            let _ = writeln!(
                out,
                "| {} | {stage} | {} | {completed} | {idx} | {score} |",
                s.combination,
                s.trials.len()
            );
        }
        out.push('\n');
    }
    out
}

pub fn report(ctx: &Ctx, a: ReportArgs) -> Result<()> {
    if a.evals.is_empty() && a.logs.is_empty() {
        bail!("nothing to report: pass --eval and/or --hpo");
    }
    let summaries = a
        .evals
        .iter()
        .map(|d| {
            let path = ctx.path(d).join("summary.json");
            let s: EvalSummary = io::read_json(&path)?;
            // Reports must load; the summary alone is not enough evidence.
            EvalReport::read(&ctx.path(d).join("report.json"))?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut studies = Vec::new();
    for p in &a.logs {
        let trials = hpo::read_log(&ctx.path(p))?;
        // A log may hold several combinations or stages; group them.
        let mut groups: BTreeMap<(String, u8), StudyResult> = BTreeMap::new();
        for t in trials {
            let stage = if t.stage == Stage::Stage1 { 1 } else { 2 };
            groups
                .entry((t.combination.to_string(), stage))
                .or_insert_with(|| StudyResult {
                    stage: t.stage,
                    combination: t.combination,
                    trials: Vec::new(),
                })
                .trials
                .push(t);
        }
        if groups.is_empty() {
            bail!("{}: empty search log", p.display());
        }
        studies.extend(groups.into_values());
    }
    let text = render_report(&summaries, &studies);
    print!("{text}");
    if let Some(out) = &a.out {
        io::write_atomic(&ctx.path(out), text.as_bytes())?;
    }
    Ok(())
}
