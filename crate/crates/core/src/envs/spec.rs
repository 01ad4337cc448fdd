use serde::{Deserialize, Serialize};

use super::EnvError;

pub const MIN_ACTIONS: usize = 2;
pub const MAX_ACTIONS: usize = 18;

/// Parameters of one shooter task.
///
/// Tier 1 rewards blind continuous shooting, tier 2 rewards aiming at sparse
/// targets, tier 3 mixes in bad targets that must be avoided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub tier: u8,
    /// Grid columns.
    pub width: usize,
    /// Grid rows, including the agent's row at the bottom.
    pub height: usize,
    /// Probability that a column receives a target in each spawned row.
    pub target_density: f64,
    /// Fraction of spawned targets that are bad (tier 3 only).
    pub bad_target_fraction: f64,
    /// Reward for shooting a bad target; must be non-positive.
    pub penalty: f64,
    pub episode_cap: usize,
    pub action_count: usize,
    pub render_side: usize,
    /// Rows spawned per episode; 0 keeps spawning until the cap.
    pub waves: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self::tier(1)
    }
}

impl TaskSpec {
    /// Preset for a tier on the default 12x12 grid.
    ///
    /// Panics if `tier` is not 1, 2 or 3.
    pub fn tier(tier: u8) -> Self {
        let base = Self {
            tier,
            width: 12,
            height: 12,
            target_density: 1.0,
            bad_target_fraction: 0.0,
            penalty: -1.0,
            episode_cap: 400,
            action_count: 2,
            render_side: 42,
            waves: 0,
        };
        match tier {
            1 => base,
            2 => Self {
                target_density: 0.1,
                action_count: 4,
                ..base
            },
            3 => Self {
                target_density: 0.15,
                bad_target_fraction: 0.5,
                action_count: 6,
                ..base
            },
            _ => panic!("tier must be 1, 2 or 3, got {tier}"),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidSpec(msg));
        if !(1..=3).contains(&self.tier) {
            return bad(format!("tier must be 1, 2 or 3, got {}", self.tier));
        }
        if self.width == 0 || self.height < 2 {
            return bad(format!("grid {}x{} too small (need width >= 1, height >= 2)", self.width, self.height));
        }
        if !(self.target_density > 0.0 && self.target_density <= 1.0) {
            return bad(format!("target_density {} outside (0, 1]", self.target_density));
        }
        if !(0.0..=1.0).contains(&self.bad_target_fraction) {
            return bad(format!("bad_target_fraction {} outside [0, 1]", self.bad_target_fraction));
        }
        if self.tier < 3 && self.bad_target_fraction != 0.0 {
            return bad(format!("tier {} tasks cannot have bad targets", self.tier));
        }
        if self.tier == 1 && self.target_density < 0.8 {
            return bad(format!(
                "tier 1 needs target_density >= 0.8 so blind shooting scores, got {}",
                self.target_density
            ));
        }
        if !(self.penalty <= 0.0) || !self.penalty.is_finite() {
            return bad(format!("penalty must be a finite non-positive number, got {}", self.penalty));
        }
        if self.episode_cap == 0 {
            return bad("episode_cap must be at least 1".into());
        }
        if !(MIN_ACTIONS..=MAX_ACTIONS).contains(&self.action_count) {
            return bad(format!(
                "action_count {} outside [{MIN_ACTIONS}, {MAX_ACTIONS}]",
                self.action_count
            ));
        }
        if self.render_side == 0 {
            return bad("render_side must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for tier in 1..=3 {
            TaskSpec::tier(tier).validate().unwrap();
        }
    }

    #[test]
    fn invariants_enforced() {
        let sparse_tier1 = TaskSpec { target_density: 0.5, ..TaskSpec::tier(1) };
        assert!(sparse_tier1.validate().is_err());
        let bad_tier2 = TaskSpec { bad_target_fraction: 0.2, ..TaskSpec::tier(2) };
        assert!(bad_tier2.validate().is_err());
        let too_many = TaskSpec { action_count: 19, ..TaskSpec::tier(2) };
        assert!(too_many.validate().is_err());
        let too_few = TaskSpec { action_count: 1, ..TaskSpec::tier(2) };
        assert!(too_few.validate().is_err());
        let reward_penalty = TaskSpec { penalty: 1.0, ..TaskSpec::tier(3) };
        assert!(reward_penalty.validate().is_err());
    }
}
