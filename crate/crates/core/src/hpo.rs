//! Two-stage hyperparameter search: seeded random search over architecture
//! parameters at one second of data, then a grid over data parameters for
//! the stage-one winner.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoding::EncodingKind;
use crate::error::{Error, Result};
use crate::io;
use crate::models::nn::Cell;
use crate::models::{Family, MlpConfig, ModelConfig, RfConfig, RnnConfig};
use crate::sampling::{DataParams, FPS_GRID, WINDOW_GRID};
use crate::seed;

/// Stage-two grid for binned samples.
pub const BINNED_GRID: [usize; 8] = [10, 30, 90, 180, 450, 700, 900, 1350];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Combination {
    pub family: Family,
    pub encoding: EncodingKind,
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.family, self.encoding)
    }
}

impl FromStr for Combination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (f, e) = s
            .split_once('+')
            .ok_or_else(|| Error::InvalidArgument(format!("combination `{s}` should look like lstm+br")))?;
        Ok(Combination {
            family: f.parse()?,
            encoding: e.parse()?,
        })
    }
}

impl Combination {
    /// The fixed one-second data parameters of stage one.
    pub fn stage1_data(&self) -> DataParams {
        if self.family.is_recurrent() {
            DataParams::WINDOWED_ONE_SECOND
        } else {
            DataParams::BINNED_ONE_SECOND
        }
    }

    /// Every data configuration tried in stage two.
    pub fn stage2_grid(&self) -> Vec<DataParams> {
        if self.family.is_recurrent() {
            FPS_GRID
                .iter()
                .flat_map(|&fps_target| {
                    WINDOW_GRID.iter().map(move |&window_size| DataParams::Windowed {
                        fps_target,
                        window_size,
                    })
                })
                .collect()
        } else {
            BINNED_GRID
                .iter()
                .map(|&frames_per_bin| DataParams::Binned { frames_per_bin })
                .collect()
        }
    }
}

fn log_uniform(rng: &mut seed::Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
}

fn int(rng: &mut seed::Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

/// Draws an architecture configuration from the search ranges.
pub fn sample_config(family: Family, rng: &mut seed::Rng, model_seed: u64) -> ModelConfig {
    match family.cell() {
        None if family == Family::Rf => ModelConfig::Rf(RfConfig {
            n_estimators: int(rng, RfConfig::N_ESTIMATORS),
            min_samples_leaf: int(rng, RfConfig::MIN_SAMPLES_LEAF),
            seed: model_seed,
        }),
        None => ModelConfig::Mlp(MlpConfig {
            layers: int(rng, MlpConfig::LAYERS),
            layer_size: int(rng, MlpConfig::LAYER_SIZE),
            learning_rate: log_uniform(rng, MlpConfig::LEARNING_RATE),
            seed: model_seed,
        }),
        Some(cell) => sample_rnn(cell, rng, model_seed),
    }
}

fn sample_rnn(cell: Cell, rng: &mut seed::Rng, model_seed: u64) -> ModelConfig {
    let (lo, hi) = RnnConfig::DROPOUT;
    ModelConfig::Rnn(RnnConfig {
        cell,
        hidden_size: int(rng, RnnConfig::HIDDEN_SIZE),
        layers: int(rng, RnnConfig::LAYERS),
        dropout: rng.random_range(lo..=hi),
        learning_rate: log_uniform(rng, RnnConfig::LEARNING_RATE),
        seed: model_seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub stage: Stage,
    pub combination: Combination,
    pub config: ModelConfig,
    pub data: DataParams,
    /// Validation minimum accuracy; absent for failed trials.
    pub objective: Option<f64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub seed: u64,
    pub wall_seconds: f64,
}

impl Trial {
    /// Objective for ranking; failed trials rank at negative infinity.
    pub fn score(&self) -> f64 {
        self.objective.unwrap_or(f64::NEG_INFINITY)
    }

    fn same_plan(&self, other: &Trial) -> bool {
        self.index == other.index
            && self.stage == other.stage
            && self.combination == other.combination
            && self.config == other.config
            && self.data == other.data
            && self.seed == other.seed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub stage: Stage,
    pub combination: Combination,
    pub trials: Vec<Trial>,
}

impl StudyResult {
    /// Highest-scoring completed trial; ties go to the earliest.
    pub fn best(&self) -> Option<&Trial> {
        let mut best: Option<&Trial> = None;
        for t in self.trials.iter().filter(|t| t.status == Status::Completed) {
            if best.is_none_or(|b| t.score() > b.score()) {
                best = Some(t);
            }
        }
        best
    }
}

/// Reads a line-delimited trial log; a missing file is an empty log. A
/// truncated final line (from an interrupted write) is ignored.
pub fn read_log(path: &Path) -> Result<Vec<Trial>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = io::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<Trial>(line) {
            Ok(t) => out.push(t),
            Err(e) if i + 1 == lines.len() && !text.ends_with('\n') => {
                warn!("ignoring truncated last line of {}: {e}", path.display());
            }
            Err(e) => return Err(Error::parse(i + 1, e.to_string())),
        }
    }
    Ok(out)
}

fn write_log(path: &Path, trials: &[Trial]) -> Result<()> {
    let mut text = String::new();
    for t in trials {
        text.push_str(&serde_json::to_string(t)?);
        text.push('\n');
    }
    io::write_atomic(path, text.as_bytes())
}

/// Trains and scores one configuration, returning validation MinAcc.
pub type Objective<'a> = dyn FnMut(&ModelConfig, &DataParams) -> Result<f64> + 'a;

struct Plan {
    config: ModelConfig,
    data: DataParams,
    seed: u64,
}

fn run_study(
    stage: Stage,
    combination: Combination,
    plans: Vec<Plan>,
    objective: &mut Objective<'_>,
    log_path: Option<&Path>,
) -> Result<StudyResult> {
    let mut log = match log_path {
        Some(p) => read_log(p)?,
        None => Vec::new(),
    };
    let mut trials = Vec::with_capacity(plans.len());
    for (index, plan) in plans.into_iter().enumerate() {
        let mut trial = Trial {
            index,
            stage,
            combination,
            config: plan.config,
            data: plan.data,
            objective: None,
            status: Status::Failed,
            failure: None,
            seed: plan.seed,
            wall_seconds: 0.0,
        };
        if let Some(done) = log.iter().find(|t| t.same_plan(&trial)) {
            info!("{combination} trial {index}: reusing logged result");
            trials.push(done.clone());
            continue;
        }
        if log.iter().any(|t| t.index == index && t.stage == stage && t.combination == combination) {
            return Err(Error::Format(format!(
                "study log disagrees with trial {index} of {combination}; was it written with another seed?"
            )));
        }
        let started = Instant::now();
        match objective(&trial.config, &trial.data) {
            Ok(v) => {
                trial.objective = Some(v);
                trial.status = Status::Completed;
            }
            Err(Error::Diverged(reason)) => {
                warn!("{combination} trial {index} failed: {reason}");
                trial.failure = Some(reason);
            }
            Err(e) => return Err(e),
        }
        trial.wall_seconds = started.elapsed().as_secs_f64();
        info!("{combination} trial {index}: objective {:?}", trial.objective);
        log.push(trial.clone());
        if let Some(p) = log_path {
            write_log(p, &log)?;
        }
        trials.push(trial);
    }
    Ok(StudyResult {
        stage,
        combination,
        trials,
    })
}

/// `budget` random configurations trained on one-second samples.
pub fn stage1(
    combination: Combination,
    budget: usize,
    seed: u64,
    objective: &mut Objective<'_>,
    log_path: Option<&Path>,
) -> Result<StudyResult> {
    if budget < 1 {
        return Err(Error::InvalidArgument("budget must be at least 1".into()));
    }
    let data = combination.stage1_data();
    let plans = (0..budget)
        .map(|i| {
            let label = format!("hpo/stage1/{combination}/{i}");
            let mut rng = seed::derived_rng(seed, &label);
            let trial_seed = seed::derive_seed(seed, &format!("{label}/model"));
            Plan {
                config: sample_config(combination.family, &mut rng, trial_seed),
                data,
                seed: trial_seed,
            }
        })
        .collect();
    run_study(Stage::Stage1, combination, plans, objective, log_path)
}

/// One training of `best_config` per point of the data-parameter grid.
pub fn stage2(
    combination: Combination,
    best_config: &ModelConfig,
    seed: u64,
    objective: &mut Objective<'_>,
    log_path: Option<&Path>,
) -> Result<StudyResult> {
    if best_config.family() != combination.family {
        return Err(Error::InvalidArgument(format!(
            "stage-one config is a {} model, combination is {combination}",
            best_config.family()
        )));
    }
    best_config.validate()?;
    let plans = combination
        .stage2_grid()
        .into_iter()
        .enumerate()
        .map(|(i, data)| {
            let trial_seed = seed::derive_seed(seed, &format!("hpo/stage2/{combination}/{i}/model"));
            let mut config = best_config.clone();
            config.set_seed(trial_seed);
            Plan {
                config,
                data,
                seed: trial_seed,
            }
        })
        .collect();
    run_study(Stage::Stage2, combination, plans, objective, log_path)
}
