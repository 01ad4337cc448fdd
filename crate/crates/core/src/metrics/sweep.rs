use serde::{Deserialize, Serialize};

use super::sensitivity::{sensitivity_report, spearman, SensitivityOptions};
use super::MetricsError;
use crate::model::{GtnConfig, GtnNetwork};
use crate::trainer::{train, TrainConfig};

/// One trained model's RAPS in a task-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RapsRow {
    pub task_count: usize,
    pub seed: u64,
    pub clean_score: f64,
    pub aps: Option<Vec<f64>>,
    pub raps: Option<Vec<f64>>,
}

/// Task-count sweep results with the trend statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RapsTable {
    pub levels: usize,
    pub rows: Vec<RapsRow>,
    /// Spearman correlation of task count against top-level RAPS, per seed.
    pub spearman_by_seed: Vec<(u64, Option<f64>)>,
    /// Mean of the defined per-seed correlations.
    pub mean_spearman: Option<f64>,
}

/// RAPS of one training snapshot in an episode-axis sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RapsEpisodeRow {
    pub seed: u64,
    pub episodes: usize,
    pub update_counter: u64,
    pub clean_score: f64,
    pub aps: Option<Vec<f64>>,
    pub raps: Option<Vec<f64>>,
}

/// Trains a fresh network on the first `k` tasks of `template` for every `k`
/// in `task_counts` and every seed, and measures RAPS over those `k` tasks.
pub fn raps_sweep(
    model: &GtnConfig,
    template: &TrainConfig,
    task_counts: &[usize],
    seeds: &[u64],
    eval: &SensitivityOptions,
) -> Result<RapsTable, MetricsError> {
    if task_counts.is_empty() || seeds.is_empty() {
        return Err(MetricsError::Usage("task counts and seeds must be nonempty".into()));
    }
    if let Some(&k) = task_counts.iter().find(|&&k| k == 0 || k > template.tasks.len()) {
        return Err(MetricsError::Usage(format!(
            "task count {k} outside 1..={}",
            template.tasks.len()
        )));
    }
    let mut rows = Vec::with_capacity(task_counts.len() * seeds.len());
    for &seed in seeds {
        for &k in task_counts {
            let config = TrainConfig {
                tasks: template.tasks[..k].to_vec(),
                seed,
                workers: template.workers.max(k),
                ..template.clone()
            };
            let outcome = train(model, &config)?;
            let mut net = outcome.network(model)?;
            let opts = SensitivityOptions { seed, ..*eval };
            let report = sensitivity_report(&mut net, &config.tasks, &opts)?;
            log::info!("raps sweep: k={k} seed={seed} raps={:?}", report.raps);
            rows.push(RapsRow {
                task_count: k,
                seed,
                clean_score: report.clean_score,
                aps: report.aps,
                raps: report.raps,
            });
        }
    }
    Ok(summarize(model.levels, rows, seeds))
}

fn summarize(levels: usize, rows: Vec<RapsRow>, seeds: &[u64]) -> RapsTable {
    let spearman_by_seed: Vec<(u64, Option<f64>)> = seeds
        .iter()
        .map(|&seed| {
            let (ks, top): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.seed == seed)
                .filter_map(|r| Some((r.task_count as f64, *r.raps.as_ref()?.last()?)))
                .unzip();
            (seed, spearman(&ks, &top))
        })
        .collect();
    let defined: Vec<f64> = spearman_by_seed.iter().filter_map(|(_, r)| *r).collect();
    let mean_spearman = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    RapsTable {
        levels,
        rows,
        spearman_by_seed,
        mean_spearman,
    }
}

/// Trains once per seed with snapshots every `template.snapshot_every`
/// episodes and measures RAPS at each snapshot.
pub fn raps_episode_sweep(
    model: &GtnConfig,
    template: &TrainConfig,
    seeds: &[u64],
    eval: &SensitivityOptions,
) -> Result<Vec<RapsEpisodeRow>, MetricsError> {
    if template.snapshot_every.is_none() {
        return Err(MetricsError::Usage("the episode-axis sweep needs snapshot_every".into()));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let config = TrainConfig { seed, ..template.clone() };
        let outcome = train(model, &config)?;
        for snap in &outcome.snapshots {
            let mut net = GtnNetwork::from_params(model.clone(), snap.params.clone())?;
            let opts = SensitivityOptions { seed, ..*eval };
            let report = sensitivity_report(&mut net, &config.tasks, &opts)?;
            rows.push(RapsEpisodeRow {
                seed,
                episodes: snap.episodes_completed,
                update_counter: snap.update_counter,
                clean_score: report.clean_score,
                aps: report.aps,
                raps: report.raps,
            });
        }
    }
    Ok(rows)
}
