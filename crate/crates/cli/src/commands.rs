use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use gtn::envs::TaskSpec;
use gtn::experiment::{cell_mean, run_ablation, write_ablation_csv, AblationMode, AblationSettings};
use gtn::metrics::{
    episode_score, raps_episode_sweep, raps_sweep, rfs, write_raps_csv, write_raps_episode_csv, write_rfs_csv,
    write_scores_csv, MetricsError, RfsRow, ScoreSample, SensitivityOptions,
};
use gtn::model::{load_checkpoint, save_checkpoint, sidecar_path, CheckpointError, GtnNetwork};
use gtn::trainer::{write_log, TrainError, TrainOutcome};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::manifest::{build_id, timestamp, Outputs, RunManifest, ARCH_BASELINE, ARCH_GTN};

pub const COMPARISON_HEADER: &[&str] = &[
    "task_id",
    "task_name",
    "gtn_score",
    "baseline_score",
    "single_score",
    "gtn_rfs",
    "baseline_rfs",
    "rfs_delta",
];

pub const ABLATION_SUMMARY_HEADER: &[&str] = &["mode", "levels", "layers", "seeds", "mean_rfs"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv error: {e}"))
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(format!("training failed: {other}")),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Train(t) => t.into(),
            MetricsError::Usage(m) => CliError::Usage(m),
            other => CliError::Runtime(format!("evaluation failed: {other}")),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Runtime(format!("checkpoint error: {e}"))
    }
}

const MISSING_REFERENCE_HELP: &str = "RFS needs single-task reference scores for every task. Produce them with \
`gtn train` on a config holding only that task, then `gtn eval --scores-only` on its checkpoint, and pass the \
resulting scores.csv or manifest.json with --reference (repeatable). Use --scores-only to skip RFS.";

struct Run<'a> {
    command: &'static str,
    architecture: &'static str,
    config: &'a ExperimentConfig,
    started_at: String,
    outputs: Outputs,
}

impl<'a> Run<'a> {
    fn start(command: &'static str, architecture: &'static str, config: &'a ExperimentConfig, out: &Path) -> Result<Self, CliError> {
        Ok(Self {
            command,
            architecture,
            config,
            started_at: timestamp(),
            outputs: Outputs::new(out)?,
        })
    }

    fn write_config(&mut self) -> Result<(), CliError> {
        let text = self.config.to_toml();
        self.outputs.write::<CliError, _>("config", "config.toml", |w| Ok(w.write_all(text.as_bytes())?))?;
        Ok(())
    }

    fn save_net(&mut self, kind: &str, name: &str, net: &GtnNetwork) -> Result<(), CliError> {
        let path = self.outputs.path(kind, name);
        let sidecar = sidecar_path(&path);
        let sidecar_name = sidecar.file_name().expect("file name").to_string_lossy().into_owned();
        self.outputs.path(&format!("{kind}-sidecar"), &sidecar_name);
        save_checkpoint(net, &path, self.config.output.precision)?;
        Ok(())
    }

    fn finish(self) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: self.command.into(),
            architecture: self.architecture.into(),
            config_hash: self.config.hash(),
            seed: self.config.train.seed,
            started_at: self.started_at,
            finished_at: timestamp(),
            build: build_id(),
            artifacts: Vec::new(),
        };
        Ok(self.outputs.finish(manifest)?)
    }
}

fn write_training(run: &mut Run<'_>, outcome: &TrainOutcome) -> Result<GtnNetwork, CliError> {
    let model = &run.config.model;
    run.outputs
        .write::<CliError, _>("log", "train_log.jsonl", |w| Ok(write_log(&outcome.log, w)?))?;
    for snap in &outcome.snapshots {
        let net = GtnNetwork::from_params(model.clone(), snap.params.clone()).map_err(|e| CliError::Runtime(e.to_string()))?;
        run.save_net("snapshot", &format!("checkpoint_ep{:07}.gtn", snap.episodes_completed), &net)?;
    }
    let net = outcome.network(model)?;
    run.save_net("checkpoint", "model.gtn", &net)?;
    Ok(net)
}

pub fn train(config: &ExperimentConfig, out: &Path) -> Result<RunManifest, CliError> {
    let mut run = Run::start("train", ARCH_GTN, config, out)?;
    run.write_config()?;
    let outcome = gtn::trainer::train(&config.model, &config.train_config())?;
    write_training(&mut run, &outcome)?;
    log::info!("trained {} updates", outcome.store.update_counter());
    run.finish()
}

fn score_roster(net: &mut GtnNetwork, config: &ExperimentConfig) -> Result<Vec<ScoreSample>, CliError> {
    let specs = config.task_specs();
    check_compatible(net, &specs)?;
    let m = &config.metrics;
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| Ok(episode_score(net, spec, i, m.eval_episodes, m.greedy, config.train.seed)?))
        .collect()
}

fn check_compatible(net: &GtnNetwork, specs: &[TaskSpec]) -> Result<(), CliError> {
    let cfg = net.config();
    for spec in specs {
        if !cfg.action_space_sizes.contains(&spec.action_count) || spec.render_side != cfg.input_side {
            return Err(CliError::Usage(format!(
                "checkpoint (heads {:?}, input {}) cannot play a task with {} actions rendered at {}",
                cfg.action_space_sizes, cfg.input_side, spec.action_count, spec.render_side
            )));
        }
    }
    Ok(())
}

/// Reads `task_name -> mean_adjusted` from a scores CSV or from the scores
/// artifact of a run manifest.
pub fn read_reference(path: &Path) -> Result<HashMap<String, f64>, CliError> {
    let csv_path: PathBuf = if path.extension().is_some_and(|e| e == "json") {
        let manifest = RunManifest::read(path)
            .map_err(|e| CliError::Usage(format!("cannot read reference manifest {}: {e}", path.display())))?;
        let scores = manifest.artifact("scores").ok_or_else(|| {
            CliError::Usage(format!("manifest {} lists no scores artifact. {MISSING_REFERENCE_HELP}", path.display()))
        })?;
        path.parent().unwrap_or(Path::new(".")).join(&scores.path)
    } else {
        path.to_owned()
    };
    let mut reader = csv::Reader::from_path(&csv_path)
        .map_err(|e| CliError::Usage(format!("cannot read reference scores {}: {e}. {MISSING_REFERENCE_HELP}", csv_path.display())))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{} has no `{name}` column", csv_path.display())))
    };
    let (name_col, score_col) = (col("task_name")?, col("mean_adjusted")?);
    let mut out = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let score: f64 = record[score_col]
            .parse()
            .map_err(|_| CliError::Usage(format!("bad mean_adjusted `{}` in {}", &record[score_col], csv_path.display())))?;
        out.insert(record[name_col].to_string(), score);
    }
    Ok(out)
}

fn gather_references(paths: &[PathBuf], names: &[String]) -> Result<Vec<f64>, CliError> {
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no reference scores given. {MISSING_REFERENCE_HELP}")));
    }
    let mut all = HashMap::new();
    for p in paths {
        all.extend(read_reference(p)?);
    }
    names
        .iter()
        .map(|n| {
            all.get(n)
                .copied()
                .ok_or_else(|| CliError::Usage(format!("no reference score for task `{n}`. {MISSING_REFERENCE_HELP}")))
        })
        .collect()
}

fn rfs_rows(names: &[String], multi: &[f64], single: &[f64]) -> Vec<RfsRow> {
    names
        .iter()
        .enumerate()
        .map(|(i, name)| RfsRow {
            task_id: i,
            task_name: name.clone(),
            multi_score: multi[i],
            single_score: single[i],
            rfs: rfs(multi[i], single[i]).ok(),
        })
        .collect()
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub references: &'a [PathBuf],
    pub scores_only: bool,
}

pub fn eval(config: &ExperimentConfig, args: &EvalArgs<'_>, out: &Path) -> Result<RunManifest, CliError> {
    let names = config.task_names();
    let single = if args.scores_only {
        None
    } else {
        Some(gather_references(args.references, &names)?)
    };
    let mut net = load_checkpoint(args.checkpoint)?;
    let samples = score_roster(&mut net, config)?;

    let mut run = Run::start("eval", ARCH_GTN, config, out)?;
    run.write_config()?;
    run.outputs
        .write::<CliError, _>("scores", "scores.csv", |w| Ok(write_scores_csv(&samples, &names, w)?))?;
    if let Some(single) = single {
        let multi: Vec<f64> = samples.iter().map(|s| s.mean_adjusted).collect();
        let rows = rfs_rows(&names, &multi, &single);
        for r in &rows {
            match r.rfs {
                Some(v) => log::info!("{}: RFS {v:.3}", r.task_name),
                None => log::warn!("{}: RFS undefined, single-task reference score is zero", r.task_name),
            }
        }
        run.outputs
            .write::<CliError, _>("rfs", "rfs.csv", |w| Ok(write_rfs_csv(&rows, w)?))?;
    }
    run.finish()
}

pub fn ablate(config: &ExperimentConfig, levels: &[usize], layers: &[usize], out: &Path) -> Result<RunManifest, CliError> {
    if levels.is_empty() || layers.is_empty() || levels.contains(&0) || layers.contains(&0) {
        return Err(CliError::Usage("--levels and --layers need positive entries".into()));
    }
    let m = &config.metrics;
    let settings = AblationSettings {
        levels: levels.to_vec(),
        layers: layers.to_vec(),
        seeds: m.seeds.clone(),
        reference_layers: m.reference_layers,
        eval_episodes: m.eval_episodes,
        greedy: m.greedy,
        multi_workers: config.train.workers,
        multi_layers: None,
    };
    let template = config.train_config();
    let single_template = gtn::trainer::TrainConfig { workers: 1, ..template.clone() };
    let rows = run_ablation(&config.model, &single_template, &settings)?;

    let mut run = Run::start("ablate", ARCH_GTN, config, out)?;
    run.write_config()?;
    run.outputs
        .write::<CliError, _>("ablation", "ablation.csv", |w| Ok(write_ablation_csv(&rows, w)?))?;
    run.outputs.write::<CliError, _>("ablation-summary", "ablation_summary.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(ABLATION_SUMMARY_HEADER)?;
        for mode in [AblationMode::Single, AblationMode::Multi] {
            for &l in levels {
                for &n in layers {
                    let mean = cell_mean(&rows, mode, l, n);
                    csv.write_record([
                        mode.as_str().to_string(),
                        l.to_string(),
                        n.to_string(),
                        settings.seeds.len().to_string(),
                        mean.map(|v| v.to_string()).unwrap_or_default(),
                    ])?;
                }
            }
        }
        csv.flush()?;
        Ok(())
    })?;
    run.finish()
}

#[derive(Serialize)]
struct RapsSummary {
    task_counts: Vec<usize>,
    spearman_by_seed: Vec<(u64, Option<f64>)>,
    mean_spearman: Option<f64>,
}

pub fn raps(config: &ExperimentConfig, episode_axis: bool, out: &Path) -> Result<RunManifest, CliError> {
    let m = &config.metrics;
    let eval = SensitivityOptions {
        episodes: m.eval_episodes,
        greedy: m.greedy,
        noise_std: m.noise_std,
        seed: 0,
    };
    let template = config.train_config();
    let mut run = Run::start("raps", ARCH_GTN, config, out)?;
    if episode_axis {
        if template.snapshot_every.is_none() {
            return Err(CliError::Usage(
                "the episode-axis RAPS sweep needs --checkpoint-every (or train.snapshot_every)".into(),
            ));
        }
        let rows = raps_episode_sweep(&config.model, &template, &m.seeds, &eval)?;
        run.write_config()?;
        run.outputs.write::<CliError, _>("raps-episodes", "raps_episodes.csv", |w| {
            Ok(write_raps_episode_csv(&rows, config.model.levels, w)?)
        })?;
    } else {
        let counts = config.task_counts();
        let table = raps_sweep(&config.model, &template, &counts, &m.seeds, &eval)?;
        match table.mean_spearman {
            Some(r) => log::info!("mean Spearman(task count, top-level RAPS) = {r:.3}"),
            None => log::warn!("trend statistic undefined: too few defined RAPS rows"),
        }
        run.write_config()?;
        run.outputs
            .write::<CliError, _>("raps", "raps.csv", |w| Ok(write_raps_csv(&table, w)?))?;
        let summary = RapsSummary {
            task_counts: counts,
            spearman_by_seed: table.spearman_by_seed.clone(),
            mean_spearman: table.mean_spearman,
        };
        run.outputs.write::<CliError, _>("raps-summary", "raps_summary.json", |w| {
            serde_json::to_writer_pretty(&mut *w, &summary).map_err(std::io::Error::from)?;
            Ok(w.write_all(b"\n")?)
        })?;
    }
    run.finish()
}

pub struct BaselineArgs<'a> {
    /// Scores of a tower network on the same roster, to compare against.
    pub compare: Option<&'a Path>,
    pub references: &'a [PathBuf],
}

/// Forces `levels = 1`, trains and scores the roster.
pub fn baseline(config: &ExperimentConfig, args: &BaselineArgs<'_>, out: &Path) -> Result<RunManifest, CliError> {
    let mut config = config.clone();
    if config.model.levels != 1 {
        log::warn!(
            "baseline uses a single level; overriding model.levels = {} with 1",
            config.model.levels
        );
        config.model.levels = 1;
    }
    let names = config.task_names();
    let comparison = match args.compare {
        Some(path) => {
            let gtn_scores = read_reference(path)?;
            let gtn: Vec<f64> = names
                .iter()
                .map(|n| {
                    gtn_scores
                        .get(n)
                        .copied()
                        .ok_or_else(|| CliError::Usage(format!("{} has no score for task `{n}`", path.display())))
                })
                .collect::<Result<_, _>>()?;
            Some((gtn, gather_references(args.references, &names)?))
        }
        None => None,
    };

    let outcome = gtn::trainer::train(&config.model, &config.train_config())?;
    let mut run = Run::start("baseline", ARCH_BASELINE, &config, out)?;
    run.write_config()?;
    let mut net = write_training(&mut run, &outcome)?;
    let samples = score_roster(&mut net, &config)?;
    run.outputs
        .write::<CliError, _>("scores", "scores.csv", |w| Ok(write_scores_csv(&samples, &names, w)?))?;
    if let Some((gtn, single)) = comparison {
        let base: Vec<f64> = samples.iter().map(|s| s.mean_adjusted).collect();
        run.outputs.write::<CliError, _>("comparison", "comparison.csv", |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(COMPARISON_HEADER)?;
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            for (i, name) in names.iter().enumerate() {
                let g = rfs(gtn[i], single[i]).ok();
                let b = rfs(base[i], single[i]).ok();
                let delta = g.zip(b).map(|(g, b)| g - b);
                csv.write_record([
                    i.to_string(),
                    name.clone(),
                    gtn[i].to_string(),
                    base[i].to_string(),
                    single[i].to_string(),
                    opt(g),
                    opt(b),
                    opt(delta),
                ])?;
            }
            csv.flush()?;
            Ok(())
        })?;
    }
    run.finish()
}
