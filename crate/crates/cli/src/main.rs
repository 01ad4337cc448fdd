//! `gtn`: train, evaluate and sweep tower networks from a TOML experiment config.
//!
//! Exit codes: 0 success, 2 config or usage error, 3 runtime error.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{BaselineArgs, CliError, EvalArgs};
use config::{ExperimentConfig, Overrides};

#[derive(Debug, Parser)]
#[command(name = "gtn", version, about = "Generalization tower networks: multi-task actor-critic experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output.dir` from the config, then `runs`.
    #[arg(long, env = "GTN_OUT_DIR")]
    out: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `train.episodes_per_task`.
    #[arg(long)]
    episodes: Option<usize>,
    /// Overrides `train.workers`.
    #[arg(long)]
    workers: Option<usize>,
    /// Keep a checkpoint every this many finished episodes.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Evaluate with argmax actions (`true`) or sampled ones (`false`).
    #[arg(long)]
    greedy: Option<bool>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one network on the task roster.
    Train(Common),
    /// Score a checkpoint on the roster and compute RFS against single-task references.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Single-task reference scores: a scores.csv or the manifest.json of an eval run. Repeatable.
        #[arg(long = "reference")]
        references: Vec<PathBuf>,
        /// Only write scores.csv; no RFS table.
        #[arg(long)]
        scores_only: bool,
    },
    /// Single- and multi-task RFS over a grid of tower heights and depths.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Tower heights; defaults to `metrics.levels`.
        #[arg(long, value_delimiter = ',')]
        levels: Vec<usize>,
        /// Tower depths; defaults to `metrics.layers`.
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
    },
    /// RAPS over growing task rosters, or over training time with --episode-axis.
    Raps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episode_axis: bool,
    },
    /// Train the single-level multi-task baseline and optionally compare it with a tower network.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Tower-network scores (scores.csv or eval manifest) to compare against.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long = "reference")]
        references: Vec<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut config = ExperimentConfig::load(&common.config)?;
    config.apply(&Overrides {
        seed: common.seed,
        episodes: common.episodes,
        workers: common.workers,
        checkpoint_every: common.checkpoint_every,
        greedy: common.greedy,
    })?;
    let out = common
        .out
        .clone()
        .or_else(|| config.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    Ok((config, out))
}

fn run(cli: Cli) -> Result<(manifest::RunManifest, PathBuf), CliError> {
    let done = |m, out: &Path| Ok((m, out.to_owned()));
    match cli.command {
        Command::Train(common) => {
            let (config, out) = load(&common)?;
            done(commands::train(&config, &out)?, &out)
        }
        Command::Eval { common, checkpoint, references, scores_only } => {
            let (config, out) = load(&common)?;
            let args = EvalArgs { checkpoint: &checkpoint, references: &references, scores_only };
            done(commands::eval(&config, &args, &out)?, &out)
        }
        Command::Ablate { common, levels, layers } => {
            let (config, out) = load(&common)?;
            let levels = if levels.is_empty() { config.metrics.levels.clone() } else { levels };
            let layers = if layers.is_empty() { config.metrics.layers.clone() } else { layers };
            done(commands::ablate(&config, &levels, &layers, &out)?, &out)
        }
        Command::Raps { common, episode_axis } => {
            let (config, out) = load(&common)?;
            done(commands::raps(&config, episode_axis, &out)?, &out)
        }
        Command::Baseline { common, compare, references } => {
            let (config, out) = load(&common)?;
            let args = BaselineArgs { compare: compare.as_deref(), references: &references };
            done(commands::baseline(&config, &args, &out)?, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok((manifest, out)) => {
            for a in &manifest.artifacts {
                println!("{}\t{}", a.kind, out.join(&a.path).display());
            }
            println!("manifest\t{}", out.join(manifest::MANIFEST_FILE).display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
