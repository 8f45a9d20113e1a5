//! `xrid`: command-line front end of the identification toolkit.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use xrid_core::EncodingKind;

#[derive(Debug, Parser)]
#[command(name = "xrid", version, about = "Identify XR users from head and hand motion")]
struct Cli {
    /// Directory relative paths are resolved against.
    #[arg(long, global = true, env = "XRID_WORKDIR", default_value = ".")]
    workdir: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a directory of BVH files into takes and a manifest.
    Import(commands::ImportArgs),
    /// Generate synthetic subjects.
    Synth(commands::SynthArgs),
    /// Filter takes and split them into train, validation and test.
    Split(commands::SplitArgs),
    /// Write per-take feature sequences.
    Encode(commands::EncodeArgs),
    /// Cut one split role into samples.
    Sample(commands::SampleArgs),
    /// Train a model.
    Train(commands::TrainArgs),
    /// Evaluate a model on the test takes.
    Eval(commands::EvalArgs),
    /// Hyperparameter search, stage 1 or 2.
    Hpo(commands::HpoArgs),
    /// Summarize evaluation results and search logs.
    Report(commands::ReportArgs),
}

/// Manifest and split locations shared by several commands.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long, default_value = "data/manifest.json")]
    pub manifest: PathBuf,
    #[arg(long, default_value = "split.json")]
    pub split: PathBuf,
}

pub fn parse_kind(s: &str) -> Result<EncodingKind, String> {
    s.parse().map_err(|e: xrid_core::Error| e.to_string())
}

/// Exit status for a failed command: 1 for invalid usage or configuration,
/// 2 for bad or missing data, 3 for training divergence.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<xrid_core::Error>() {
            return match e {
                xrid_core::Error::Diverged(_) => 3,
                e if e.is_data_error() => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

/// The error chain on one line, skipping causes already quoted by the
/// message above them.
fn one_line(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string().replace('\n', " ");
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

pub struct Ctx {
    pub workdir: PathBuf,
}

impl Ctx {
    pub fn path(&self, p: &Path) -> PathBuf {
        xrid_core::io::resolve(&self.workdir, p)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let ctx = Ctx { workdir: cli.workdir };
    let result = match cli.command {
        Command::Import(a) => commands::import(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Split(a) => commands::split(&ctx, a),
        Command::Encode(a) => commands::encode(&ctx, a),
        Command::Sample(a) => commands::sample(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Hpo(a) => commands::hpo(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn exit_codes_follow_the_root_cause() {
        let diverged: anyhow::Result<()> = Err(xrid_core::Error::Diverged("loss 1e9".into())).context("training");
        assert_eq!(exit_code(&diverged.unwrap_err()), 3);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        assert_eq!(exit_code(&anyhow::Error::new(io).context("reading x")), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("bad flag")), 1);
    }

    #[test]
    fn one_line_drops_repeated_causes() {
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "gone");
        let err = anyhow::Error::new(io).context("x: gone");
        assert_eq!(one_line(&err), "x: gone");
    }
}
