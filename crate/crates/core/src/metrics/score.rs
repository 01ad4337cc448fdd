use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::envs::{episode_seed, oracle_action, random_baseline_score, run_episode, EnvState, TaskSpec};
use crate::model::GtnNetwork;
use crate::nn::Tensor;
use crate::seeding;
use crate::trainer::{greedy_action, sample_action};

/// Anything that can play a shooter episode.
pub trait Agent {
    /// Called before the first step of every episode.
    fn begin_episode(&mut self);
    fn act(&mut self, state: &EnvState, observation: &Tensor) -> Result<usize, MetricsError>;
}

/// A tower network acting through the policy head of the task's action count.
pub struct GtnAgent<'a> {
    net: &'a mut GtnNetwork,
    greedy: bool,
    rng: ChaCha8Rng,
}

impl<'a> GtnAgent<'a> {
    pub fn new(net: &'a mut GtnNetwork, greedy: bool, seed: u64) -> Self {
        Self {
            net,
            greedy,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for GtnAgent<'_> {
    fn begin_episode(&mut self) {
        self.net.reset_recurrent();
    }

    fn act(&mut self, state: &EnvState, observation: &Tensor) -> Result<usize, MetricsError> {
        let n = state.spec().action_count;
        let out = self.net.step(observation)?;
        let policy = out.policies.get(&n).ok_or(MetricsError::MissingHead(n))?;
        Ok(if self.greedy {
            greedy_action(policy.data())
        } else {
            sample_action(policy.data(), &mut self.rng)
        })
    }
}

/// Uniformly random actions.
pub struct UniformAgent {
    rng: ChaCha8Rng,
}

impl UniformAgent {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for UniformAgent {
    fn begin_episode(&mut self) {}

    fn act(&mut self, state: &EnvState, _: &Tensor) -> Result<usize, MetricsError> {
        Ok(self.rng.gen_range(0..state.spec().action_count))
    }
}

/// Scripted play of a given knowledge tier.
pub struct OracleAgent {
    pub tier: u8,
}

impl Agent for OracleAgent {
    fn begin_episode(&mut self) {}

    fn act(&mut self, state: &EnvState, _: &Tensor) -> Result<usize, MetricsError> {
        Ok(oracle_action(self.tier, state))
    }
}

/// Mean score of an agent on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub task_id: usize,
    pub episodes: usize,
    pub mean_raw: f64,
    /// Standard error of `mean_raw`.
    pub std_error: f64,
    /// Mean score of uniform-random play on the same episode layouts.
    pub baseline: f64,
    /// `mean_raw - baseline`
    pub mean_adjusted: f64,
    pub greedy: bool,
    pub seed: u64,
}

/// Plays `episodes` episodes of `spec` and subtracts the random-action baseline.
///
/// Episode `e` starts from the layout `episode_seed(seed, e)`, and the baseline
/// is computed on the same layouts.
pub fn evaluate_agent<A: Agent + ?Sized>(
    agent: &mut A,
    spec: &TaskSpec,
    task_id: usize,
    episodes: usize,
    greedy: bool,
    seed: u64,
) -> Result<ScoreSample, MetricsError> {
    if episodes == 0 {
        return Err(MetricsError::NoEpisodes);
    }
    let mut scores = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        agent.begin_episode();
        let mut failure = None;
        let score = run_episode(spec, episode_seed(seed, ep), |state, obs| match agent.act(state, obs) {
            Ok(a) => a,
            Err(e) => {
                failure.get_or_insert(e);
                0
            }
        })?;
        if let Some(e) = failure {
            return Err(e);
        }
        scores.push(score);
    }
    let n = episodes as f64;
    let mean_raw = scores.iter().sum::<f64>() / n;
    let std_error = if episodes > 1 {
        let var = scores.iter().map(|s| (s - mean_raw).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let baseline = random_baseline_score(spec, episodes, seed)?;
    Ok(ScoreSample {
        task_id,
        episodes,
        mean_raw,
        std_error,
        baseline,
        mean_adjusted: mean_raw - baseline,
        greedy,
        seed,
    })
}

/// Scores a tower network on one task; the recurrent state is reset every episode.
pub fn episode_score(
    net: &mut GtnNetwork,
    spec: &TaskSpec,
    task_id: usize,
    episodes: usize,
    greedy: bool,
    seed: u64,
) -> Result<ScoreSample, MetricsError> {
    let mut agent = GtnAgent::new(net, greedy, seeding::derive(seed, 0xac7));
    evaluate_agent(&mut agent, spec, task_id, episodes, greedy, seed)
}

/// Relative final score: `multi / single` on baseline-adjusted scores.
pub fn rfs(multi_score: f64, single_score: f64) -> Result<f64, MetricsError> {
    if single_score.abs() < 1e-9 {
        return Err(MetricsError::UndefinedRfs { single_score });
    }
    Ok(multi_score / single_score)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rfs_examples() {
        assert!((rfs(52.0, 100.0).unwrap() - 0.52).abs() < 1e-15);
        assert_eq!(rfs(3.5, 3.5).unwrap(), 1.0);
        assert!(matches!(rfs(1.0, 1e-12), Err(MetricsError::UndefinedRfs { .. })));
    }

    #[test]
    fn oracle_beats_baseline_on_tier1() {
        let spec = TaskSpec { episode_cap: 60, ..TaskSpec::tier(1) };
        let s = evaluate_agent(&mut OracleAgent { tier: 1 }, &spec, 0, 20, true, 3).unwrap();
        assert!(s.mean_adjusted > 0.0);
        assert_eq!(s.mean_raw, 60.0);
    }

    #[test]
    fn zero_episodes_rejected() {
        let spec = TaskSpec::tier(1);
        assert!(matches!(
            evaluate_agent(&mut UniformAgent::new(0), &spec, 0, 0, false, 0),
            Err(MetricsError::NoEpisodes)
        ));
    }
}
