//! Deterministic toy shooters with three nested knowledge tiers.

mod policies;
mod shooter;
mod spec;

pub use policies::{episode_seed, oracle_action, oracle_policy, oracle_score, random_baseline_score, run_episode};
pub use shooter::{
    env_reset, env_step, Cell, EnvState, StepResult, ACTION_LEFT, ACTION_NOOP, ACTION_RIGHT, ACTION_SHOOT,
    SHADE_AGENT, SHADE_BAD, SHADE_GOOD,
};
pub use spec::{TaskSpec, MAX_ACTIONS, MIN_ACTIONS};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("action {action} out of range for {action_count} actions")]
    InvalidAction { action: usize, action_count: usize },
    #[error("step called after the episode ended")]
    EpisodeOver,
}
