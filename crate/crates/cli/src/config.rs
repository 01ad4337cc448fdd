//! Experiment config files.
//!
//! A TOML document with one table per module:
//!
//! ```toml
//! format_version = 1
//!
//! [model]            # tower topology, see `GtnConfig`
//! levels = 2
//!
//! [train]            # hyperparameters, see `TrainConfig`
//! episodes_per_task = 500
//!
//! [[tasks]]          # one entry per task: a tier preset plus overrides
//! name = "shoot"
//! tier = 1
//! render_side = 42
//!
//! [metrics]
//! eval_episodes = 100
//!
//! [output]
//! dir = "runs/shoot"
//! ```
//!
//! Unknown keys are errors. Omitted keys take their defaults.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use gtn::envs::TaskSpec;
use gtn::model::{GtnConfig, Precision};
use gtn::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{}{section}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid {
        line: Option<usize>,
        section: String,
        message: String,
    },
}

/// One task of the roster: a tier preset with optional field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub name: String,
    pub tier: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bad_target_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub render_side: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waves: Option<usize>,
}

impl TaskEntry {
    pub fn spec(&self) -> Result<TaskSpec, String> {
        if !(1..=3).contains(&self.tier) {
            return Err(format!("tier must be 1, 2 or 3, got {}", self.tier));
        }
        let base = TaskSpec::tier(self.tier);
        let spec = TaskSpec {
            tier: self.tier,
            width: self.width.unwrap_or(base.width),
            height: self.height.unwrap_or(base.height),
            target_density: self.target_density.unwrap_or(base.target_density),
            bad_target_fraction: self.bad_target_fraction.unwrap_or(base.bad_target_fraction),
            penalty: self.penalty.unwrap_or(base.penalty),
            episode_cap: self.episode_cap.unwrap_or(base.episode_cap),
            action_count: self.action_count.unwrap_or(base.action_count),
            render_side: self.render_side.unwrap_or(base.render_side),
            waves: self.waves.unwrap_or(base.waves),
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub eval_episodes: usize,
    /// Seeds of sweeps (`ablate`, `raps`).
    pub seeds: Vec<u64>,
    pub greedy: bool,
    /// Standard deviation of the perturbation noise used for APS.
    pub noise_std: f64,
    /// Roster prefixes measured by `raps`; empty means every prefix.
    pub task_counts: Vec<usize>,
    /// Tower heights of the `ablate` grid.
    pub levels: Vec<usize>,
    /// Tower depths of the `ablate` grid.
    pub layers: Vec<usize>,
    /// Depth of the single-task `M = 1` agent that RFS is relative to in `ablate`.
    pub reference_layers: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            eval_episodes: 100,
            seeds: vec![0],
            greedy: true,
            noise_std: 1.0,
            task_counts: Vec::new(),
            levels: vec![1, 2],
            layers: vec![1, 2],
            reference_layers: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Output directory used when neither `--out` nor `GTN_OUT_DIR` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    #[serde(default)]
    pub model: GtnConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Command-line overrides, applied after parsing and before validation.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub episodes: Option<usize>,
    pub workers: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub greedy: Option<bool>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses and cross-validates a config document.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))?;
        config.validate_in(Some(text))?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(episodes) = o.episodes {
            self.train.episodes_per_task = episodes;
        }
        if let Some(workers) = o.workers {
            self.train.workers = workers;
        }
        if let Some(k) = o.checkpoint_every {
            self.train.snapshot_every = Some(k);
        }
        if let Some(greedy) = o.greedy {
            self.metrics.greedy = greedy;
        }
        self.validate_in(None)
    }

    /// Validation with errors anchored to lines of `text` when available.
    fn validate_in(&self, text: Option<&str>) -> Result<(), ConfigError> {
        let invalid = |header: &str, index: usize, section: String, message: String| ConfigError::Invalid {
            line: text.and_then(|t| header_line(t, header, index)),
            section,
            message,
        };
        if self.format_version != FORMAT_VERSION {
            return Err(ConfigError::Invalid {
                line: text.and_then(|t| key_line(t, "format_version")),
                section: "format_version".into(),
                message: format!("unsupported version {} (expected {FORMAT_VERSION})", self.format_version),
            });
        }
        self.model
            .validate()
            .map_err(|e| invalid("[model]", 0, "model".into(), e.to_string()))?;
        if self.tasks.is_empty() {
            return Err(invalid("[[tasks]]", 0, "tasks".into(), "at least one [[tasks]] entry is required".into()));
        }
        let mut names = HashSet::new();
        for (i, entry) in self.tasks.iter().enumerate() {
            let section = format!("tasks[{i}] ({})", entry.name);
            let err = |m: String| invalid("[[tasks]]", i, section.clone(), m);
            if entry.name.trim().is_empty() {
                return Err(err("name must be nonempty".into()));
            }
            if !names.insert(entry.name.as_str()) {
                return Err(err(format!("duplicate task name `{}`", entry.name)));
            }
            let spec = entry.spec().map_err(err)?;
            if !self.model.action_space_sizes.contains(&spec.action_count) {
                return Err(err(format!(
                    "{} actions, but model.action_space_sizes is {:?}",
                    spec.action_count, self.model.action_space_sizes
                )));
            }
            if spec.render_side != self.model.input_side {
                return Err(err(format!(
                    "render_side {} differs from model.input_side {}",
                    spec.render_side, self.model.input_side
                )));
            }
        }
        self.train_config()
            .validate(&self.model)
            .map_err(|e| invalid("[train]", 0, "train".into(), e.to_string()))?;
        let m = &self.metrics;
        let metrics_err = |message: String| invalid("[metrics]", 0, "metrics".into(), message);
        if m.eval_episodes == 0 {
            return Err(metrics_err("eval_episodes must be at least 1".into()));
        }
        if m.seeds.is_empty() || m.levels.is_empty() || m.layers.is_empty() {
            return Err(metrics_err("seeds, levels and layers must be nonempty".into()));
        }
        if m.levels.contains(&0) || m.layers.contains(&0) || m.reference_layers == 0 {
            return Err(metrics_err("levels, layers and reference_layers must be positive".into()));
        }
        if let Some(k) = m.task_counts.iter().find(|&&k| k == 0 || k > self.tasks.len()) {
            return Err(metrics_err(format!("task count {k} outside 1..={}", self.tasks.len())));
        }
        if !(m.noise_std > 0.0) || !m.noise_std.is_finite() {
            return Err(metrics_err(format!("noise_std must be positive, got {}", m.noise_std)));
        }
        Ok(())
    }

    pub fn task_specs(&self) -> Vec<TaskSpec> {
        self.tasks.iter().map(|t| t.spec().expect("validated task")).collect()
    }

    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    /// Training config with the task roster filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            tasks: self.tasks.iter().filter_map(|t| t.spec().ok()).collect(),
            ..self.train.clone()
        }
    }

    pub fn task_counts(&self) -> Vec<usize> {
        if self.metrics.task_counts.is_empty() {
            (1..=self.tasks.len()).collect()
        } else {
            self.metrics.task_counts.clone()
        }
    }

    /// Canonical TOML rendering; parsing it gives back an identical config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// JSON with object keys sorted at every level.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes to JSON");
        serde_json::to_string(&sorted(value)).expect("JSON value serializes")
    }

    /// SHA-256 of the canonical JSON, as lowercase hex.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.canonical_json().as_bytes()))
    }
}

fn sorted(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let ordered: BTreeMap<String, Value> = map.into_iter().map(|(k, v)| (k, sorted(v))).collect();
            Value::Object(ordered.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sorted).collect()),
        other => other,
    }
}

/// 1-based line of the `index`-th occurrence of a table header.
fn header_line(text: &str, header: &str, index: usize) -> Option<usize> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim_start().starts_with(header))
        .nth(index)
        .map(|(i, _)| i + 1)
}

fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| l.trim_start().strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('=')))
        .map(|i| i + 1)
}
