use std::io::Write;

use super::sweep::{RapsEpisodeRow, RapsTable};
use super::{MetricsError, ScoreSample};

pub const SCORE_HEADER: &[&str] = &[
    "task_id",
    "task_name",
    "episodes",
    "mean_raw",
    "std_error",
    "baseline",
    "mean_adjusted",
    "greedy",
    "seed",
];

/// One row of an RFS table.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RfsRow {
    pub task_id: usize,
    pub task_name: String,
    pub multi_score: f64,
    pub single_score: f64,
    /// `None` when the single-task reference is (near) zero.
    pub rfs: Option<f64>,
}

pub const RFS_HEADER: &[&str] = &["task_id", "task_name", "multi_score", "single_score", "rfs", "defined"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn level_columns(prefix: &str, levels: usize) -> Vec<String> {
    (1..=levels).map(|m| format!("{prefix}_{m}")).collect()
}

fn level_values(v: &Option<Vec<f64>>, levels: usize) -> Vec<String> {
    match v {
        Some(v) => v.iter().map(f64::to_string).collect(),
        None => vec![String::new(); levels],
    }
}

/// Header of the task-count RAPS table for `levels` levels.
pub fn raps_header(levels: usize) -> Vec<String> {
    let mut h: Vec<String> = ["task_count", "seed", "defined", "clean_score"].map(String::from).to_vec();
    h.extend(level_columns("aps", levels));
    h.extend(level_columns("raps", levels));
    h
}

/// Header of the episode-axis RAPS table for `levels` levels.
pub fn raps_episode_header(levels: usize) -> Vec<String> {
    let mut h: Vec<String> = ["seed", "episodes", "update_counter", "defined", "clean_score"]
        .map(String::from)
        .to_vec();
    h.extend(level_columns("aps", levels));
    h.extend(level_columns("raps", levels));
    h
}

/// Writes one row per sample; `names[i]` labels `samples[i]`.
pub fn write_scores_csv<W: Write>(samples: &[ScoreSample], names: &[String], out: W) -> Result<(), MetricsError> {
    if names.len() != samples.len() {
        return Err(MetricsError::Usage(format!(
            "{} task names for {} score samples",
            names.len(),
            samples.len()
        )));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_HEADER)?;
    for (s, name) in samples.iter().zip(names) {
        w.write_record([
            s.task_id.to_string(),
            name.clone(),
            s.episodes.to_string(),
            s.mean_raw.to_string(),
            s.std_error.to_string(),
            s.baseline.to_string(),
            s.mean_adjusted.to_string(),
            s.greedy.to_string(),
            s.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rfs_csv<W: Write>(rows: &[RfsRow], out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RFS_HEADER)?;
    for r in rows {
        w.write_record([
            r.task_id.to_string(),
            r.task_name.clone(),
            r.multi_score.to_string(),
            r.single_score.to_string(),
            fmt_opt(r.rfs),
            r.rfs.is_some().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_raps_csv<W: Write>(table: &RapsTable, out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(raps_header(table.levels))?;
    for r in &table.rows {
        let mut rec = vec![
            r.task_count.to_string(),
            r.seed.to_string(),
            r.raps.is_some().to_string(),
            r.clean_score.to_string(),
        ];
        rec.extend(level_values(&r.aps, table.levels));
        rec.extend(level_values(&r.raps, table.levels));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_raps_episode_csv<W: Write>(rows: &[RapsEpisodeRow], levels: usize, out: W) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(raps_episode_header(levels))?;
    for r in rows {
        let mut rec = vec![
            r.seed.to_string(),
            r.episodes.to_string(),
            r.update_counter.to_string(),
            r.raps.is_some().to_string(),
            r.clean_score.to_string(),
        ];
        rec.extend(level_values(&r.aps, levels));
        rec.extend(level_values(&r.raps, levels));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}
