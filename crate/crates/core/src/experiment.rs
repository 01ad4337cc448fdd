//! Ablation over tower height `M` and depth `N`: for every grid cell, single-task
//! agents and one multi-task agent are trained and scored relative to a
//! single-task reference agent.

use serde::{Deserialize, Serialize};

use crate::envs::TaskSpec;
use crate::metrics::{episode_score, rfs, MetricsError};
use crate::model::GtnConfig;
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationMode {
    Single,
    Multi,
}

impl AblationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Single => "single",
            AblationMode::Multi => "multi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSettings {
    pub levels: Vec<usize>,
    pub layers: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Depth of the single-task `M = 1` reference agent.
    pub reference_layers: usize,
    pub eval_episodes: usize,
    pub greedy: bool,
    /// Workers for multi-task runs; single-task runs use `template.workers`.
    pub multi_workers: usize,
    /// Depths at which multi-task agents are trained; `None` means every depth.
    #[serde(default)]
    pub multi_layers: Option<Vec<usize>>,
}

/// Mean RFS of one grid cell, mode and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub levels: usize,
    pub layers: usize,
    pub seed: u64,
    /// Per-task RFS; `None` where the reference score is zero.
    pub task_rfs: Vec<Option<f64>>,
    /// Mean of the defined per-task values.
    pub mean_rfs: Option<f64>,
}

pub const ABLATION_HEADER: &[&str] = &["mode", "levels", "layers", "seed", "mean_rfs", "defined_tasks"];

/// Mean over seeds of a cell's `mean_rfs`, ignoring undefined rows.
pub fn cell_mean(rows: &[AblationRow], mode: AblationMode, levels: usize, layers: usize) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.mode == mode && r.levels == levels && r.layers == layers)
        .filter_map(|r| r.mean_rfs)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn score_tasks(
    model: &GtnConfig,
    config: &TrainConfig,
    eval_episodes: usize,
    greedy: bool,
) -> Result<Vec<f64>, MetricsError> {
    let outcome = train(model, config)?;
    let mut net = outcome.network(model)?;
    config
        .tasks
        .iter()
        .enumerate()
        .map(|(i, spec)| Ok(episode_score(&mut net, spec, i, eval_episodes, greedy, config.seed)?.mean_adjusted))
        .collect()
}

fn single_scores(
    model: &GtnConfig,
    template: &TrainConfig,
    tasks: &[TaskSpec],
    seed: u64,
    settings: &AblationSettings,
) -> Result<Vec<f64>, MetricsError> {
    let mut out = Vec::with_capacity(tasks.len());
    for spec in tasks {
        let config = TrainConfig {
            tasks: vec![spec.clone()],
            seed,
            ..template.clone()
        };
        out.extend(score_tasks(model, &config, settings.eval_episodes, settings.greedy)?);
    }
    Ok(out)
}

fn row(mode: AblationMode, levels: usize, layers: usize, seed: u64, scores: &[f64], reference: &[f64]) -> AblationRow {
    let task_rfs: Vec<Option<f64>> = scores.iter().zip(reference).map(|(&m, &s)| rfs(m, s).ok()).collect();
    let defined: Vec<f64> = task_rfs.iter().flatten().copied().collect();
    AblationRow {
        mode,
        levels,
        layers,
        seed,
        mean_rfs: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        task_rfs,
    }
}

/// Runs the full `levels x layers` grid for every seed.
///
/// `model` supplies everything but `levels` and `layers`; `template` supplies
/// the task roster and training hyperparameters.
pub fn run_ablation(
    model: &GtnConfig,
    template: &TrainConfig,
    settings: &AblationSettings,
) -> Result<Vec<AblationRow>, MetricsError> {
    if settings.levels.is_empty() || settings.layers.is_empty() || settings.seeds.is_empty() {
        return Err(MetricsError::Usage("ablation lists must be nonempty".into()));
    }
    let tasks = &template.tasks;
    let shaped = |levels: usize, layers: usize| GtnConfig {
        levels,
        layers,
        ..model.clone()
    };
    let mut rows = Vec::new();
    for &seed in &settings.seeds {
        let reference_model = shaped(1, settings.reference_layers);
        let reference = single_scores(&reference_model, template, tasks, seed, settings)?;
        log::info!("ablation seed {seed}: reference scores {reference:?}");
        for &m in &settings.levels {
            for &n in &settings.layers {
                let cell = shaped(m, n);
                let single = if cell == reference_model {
                    reference.clone()
                } else {
                    single_scores(&cell, template, tasks, seed, settings)?
                };
                log::info!("ablation seed {seed} M={m} N={n}: single {single:?}");
                rows.push(row(AblationMode::Single, m, n, seed, &single, &reference));
                if settings.multi_layers.as_ref().is_some_and(|l| !l.contains(&n)) {
                    continue;
                }

                let multi_config = TrainConfig {
                    tasks: tasks.clone(),
                    seed,
                    workers: settings.multi_workers.max(tasks.len()),
                    ..template.clone()
                };
                let multi = score_tasks(&cell, &multi_config, settings.eval_episodes, settings.greedy)?;
                log::info!("ablation seed {seed} M={m} N={n}: multi {multi:?}");
                rows.push(row(AblationMode::Multi, m, n, seed, &multi, &reference));
            }
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv<W: std::io::Write>(rows: &[AblationRow], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ABLATION_HEADER)?;
    for r in rows {
        w.write_record([
            r.mode.as_str().to_string(),
            r.levels.to_string(),
            r.layers.to_string(),
            r.seed.to_string(),
            r.mean_rfs.map(|v| v.to_string()).unwrap_or_default(),
            r.task_rfs.iter().flatten().count().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
