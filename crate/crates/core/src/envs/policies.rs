use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::shooter::{Cell, EnvState, ACTION_LEFT, ACTION_NOOP, ACTION_RIGHT, ACTION_SHOOT};
use super::{EnvError, TaskSpec};
use crate::nn::Tensor;
use crate::seeding;

/// Scripted play embodying the knowledge of tier `tier`:
///
/// * tier 1: shoot continuously;
/// * tier 2: move toward the nearest target column, shoot when aligned;
/// * tier 3: as tier 2, but only good targets count.
///
/// Movement falls back to a no-op when the task has no move actions.
pub fn oracle_action(tier: u8, state: &EnvState) -> usize {
    if tier <= 1 {
        return ACTION_SHOOT;
    }
    let wanted = |cell: Cell| match tier {
        2 => cell != Cell::Empty,
        _ => cell == Cell::Good,
    };
    let agent = state.agent_column();
    if let Some((_, cell)) = state.lowest_target(agent) {
        if wanted(cell) {
            return ACTION_SHOOT;
        }
    }
    let width = state.spec().width;
    // nearest column whose lowest target is wanted; ties go to the lower target, then left
    let best = (0..width)
        .filter_map(|col| {
            let (row, cell) = state.lowest_target(col)?;
            wanted(cell).then_some((col.abs_diff(agent), usize::MAX - row, col))
        })
        .min();
    let can_move = state.spec().action_count > ACTION_RIGHT;
    match best {
        Some((_, _, col)) if can_move && col < agent => ACTION_LEFT,
        Some((_, _, col)) if can_move && col > agent => ACTION_RIGHT,
        _ => ACTION_NOOP,
    }
}

/// Oracle for the task's own tier.
pub fn oracle_policy(spec: &TaskSpec, state: &EnvState) -> usize {
    oracle_action(spec.tier, state)
}

/// Plays one episode from `env_seed`, returning the undiscounted score.
pub fn run_episode<F>(spec: &TaskSpec, env_seed: u64, mut policy: F) -> Result<f64, EnvError>
where
    F: FnMut(&EnvState, &Tensor) -> usize,
{
    let (mut state, mut obs) = EnvState::reset(spec, env_seed)?;
    let mut score = 0.0;
    loop {
        let action = policy(&state, &obs);
        let step = state.step(action)?;
        score += step.reward;
        obs = step.observation;
        if step.done {
            return Ok(score);
        }
    }
}

/// Environment seed of evaluation episode `episode` under `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    seeding::derive(seed, episode as u64)
}

/// Mean score of uniform-random actions over `episodes` episodes.
pub fn random_baseline_score(spec: &TaskSpec, episodes: usize, seed: u64) -> Result<f64, EnvError> {
    if episodes == 0 {
        return Err(EnvError::InvalidSpec("random baseline needs at least one episode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, u64::MAX));
    let mut total = 0.0;
    for ep in 0..episodes {
        total += run_episode(spec, episode_seed(seed, ep), |_, _| rng.gen_range(0..spec.action_count))?;
    }
    Ok(total / episodes as f64)
}

/// Mean score of the tier-`tier` oracle on `spec`.
pub fn oracle_score(spec: &TaskSpec, tier: u8, episodes: usize, seed: u64) -> Result<f64, EnvError> {
    let mut total = 0.0;
    for ep in 0..episodes {
        total += run_episode(spec, episode_seed(seed, ep), |s, _| oracle_action(tier, s))?;
    }
    Ok(total / episodes.max(1) as f64)
}
