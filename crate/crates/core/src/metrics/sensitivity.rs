use serde::{Deserialize, Serialize};

use super::score::episode_score;
use super::MetricsError;
use crate::envs::TaskSpec;
use crate::model::{GaussianNoise, GtnNetwork};
use crate::seeding;

/// Guard on the APS denominator.
pub const APS_DELTA: f64 = 1e-9;

/// Fractional score drop, clamped to `[0, 1]`.
///
/// Undefined when the clean score is not positive.
pub fn aps(clean: f64, noisy: f64) -> Result<f64, MetricsError> {
    if !(clean > 0.0) {
        return Err(MetricsError::UndefinedAps { clean_score: clean });
    }
    Ok(((clean - noisy) / clean.max(APS_DELTA)).clamp(0.0, 1.0))
}

/// Normalizes APS values to sum to one; `None` when they sum to zero.
pub fn raps(aps: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = aps.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    Some(aps.iter().map(|a| a / total).collect())
}

/// Spearman rank correlation; ties get averaged ranks. `None` when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// How sensitivity evaluations are run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityOptions {
    pub episodes: usize,
    pub greedy: bool,
    /// Standard deviation of the Gaussian noise added to a level's output.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            episodes: 200,
            greedy: true,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

/// Per-level perturbation sensitivity of one network over a task set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Mean baseline-adjusted score without noise, averaged over tasks.
    pub clean_score: f64,
    /// Same with noise on level `m + 1`.
    pub noisy_scores: Vec<f64>,
    /// `None` when the clean score is not positive.
    pub aps: Option<Vec<f64>>,
    /// `None` when APS is undefined or sums to zero.
    pub raps: Option<Vec<f64>>,
    pub tasks: usize,
    pub episodes: usize,
    pub greedy: bool,
    pub seed: u64,
}

impl SensitivityReport {
    pub fn levels(&self) -> usize {
        self.noisy_scores.len()
    }
}

fn mean_adjusted(net: &mut GtnNetwork, specs: &[TaskSpec], opts: &SensitivityOptions) -> Result<f64, MetricsError> {
    let mut total = 0.0;
    for (i, spec) in specs.iter().enumerate() {
        total += episode_score(net, spec, i, opts.episodes, opts.greedy, opts.seed)?.mean_adjusted;
    }
    Ok(total / specs.len() as f64)
}

/// APS of level `level` (1-based) of `net` over `specs`.
pub fn level_aps(
    net: &mut GtnNetwork,
    specs: &[TaskSpec],
    level: usize,
    opts: &SensitivityOptions,
) -> Result<f64, MetricsError> {
    net.clear_noise();
    let clean = mean_adjusted(net, specs, opts)?;
    let noisy = noisy_score(net, specs, level, opts)?;
    aps(clean, noisy)
}

fn noisy_score(
    net: &mut GtnNetwork,
    specs: &[TaskSpec],
    level: usize,
    opts: &SensitivityOptions,
) -> Result<f64, MetricsError> {
    let noise = GaussianNoise::with_std(seeding::derive(opts.seed, 0x4e00 + level as u64), opts.noise_std);
    net.set_level_noise(level, Some(Box::new(noise)))?;
    let result = mean_adjusted(net, specs, opts);
    net.clear_noise();
    result
}

/// Clean score, noisy score per level, APS and RAPS of `net` over `specs`.
pub fn sensitivity_report(
    net: &mut GtnNetwork,
    specs: &[TaskSpec],
    opts: &SensitivityOptions,
) -> Result<SensitivityReport, MetricsError> {
    if specs.is_empty() {
        return Err(MetricsError::Usage("sensitivity needs at least one task".into()));
    }
    net.clear_noise();
    let clean_score = mean_adjusted(net, specs, opts)?;
    let noisy_scores = (1..=net.config().levels)
        .map(|m| noisy_score(net, specs, m, opts))
        .collect::<Result<Vec<_>, _>>()?;
    let aps: Option<Vec<f64>> = noisy_scores.iter().map(|&s| aps(clean_score, s).ok()).collect();
    let raps = aps.as_deref().and_then(raps);
    Ok(SensitivityReport {
        clean_score,
        noisy_scores,
        aps,
        raps,
        tasks: specs.len(),
        episodes: opts.episodes,
        greedy: opts.greedy,
        seed: opts.seed,
    })
}
