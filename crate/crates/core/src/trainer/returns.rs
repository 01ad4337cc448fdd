use rand::Rng;

/// Discounted returns by the backward recursion `R_t = r_t + gamma * R_{t+1}`,
/// seeded with `bootstrap` after the last reward.
pub fn discounted_returns(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut running = bootstrap;
    for (t, &r) in rewards.iter().enumerate().rev() {
        running = r + gamma * running;
        out[t] = running;
    }
    out
}

/// Draws an index from a categorical distribution.
pub fn sample_action<R: Rng + ?Sized>(policy: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, &p) in policy.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // rounding left u above the final cumulative sum; take the last nonzero entry
    policy.iter().rposition(|&p| p > 0.0).unwrap_or(policy.len() - 1)
}

/// Argmax with ties going to the lowest index.
pub fn greedy_action(policy: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in policy.iter().enumerate() {
        if p > policy[best] {
            best = i;
        }
    }
    best
}

/// Reward scaling learned from the first two episodes of a task.
///
/// `episode` is 1-based. During episodes 1 and 2 the raw reward is returned and
/// `recorded_max` tracks the largest `|r|`. Afterwards rewards are divided by
/// `recorded_max` (or by 1 when nothing nonzero was seen).
pub fn normalize_reward(episode: usize, raw: f64, recorded_max: &mut f64) -> f64 {
    if episode <= 2 {
        *recorded_max = recorded_max.max(raw.abs());
        raw
    } else {
        let scale = if *recorded_max > 0.0 { *recorded_max } else { 1.0 };
        raw / scale
    }
}

/// Per-environment wrapper around [`normalize_reward`].
#[derive(Debug, Clone, Default)]
pub struct RewardNormalizer {
    episode: usize,
    recorded_max: f64,
}

impl RewardNormalizer {
    pub fn new() -> Self {
        Self { episode: 1, recorded_max: 0.0 }
    }

    pub fn normalize(&mut self, raw: f64) -> f64 {
        normalize_reward(self.episode, raw, &mut self.recorded_max)
    }

    pub fn end_episode(&mut self) {
        self.episode += 1;
    }

    /// 1-based index of the current episode.
    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn recorded_max(&self) -> f64 {
        self.recorded_max
    }
}
