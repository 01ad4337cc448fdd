use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, TaskSpec};
use crate::nn::Tensor;

pub const ACTION_NOOP: usize = 0;
pub const ACTION_SHOOT: usize = 1;
pub const ACTION_LEFT: usize = 2;
pub const ACTION_RIGHT: usize = 3;

pub const SHADE_AGENT: f64 = 0.3;
pub const SHADE_GOOD: f64 = 1.0;
pub const SHADE_BAD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Empty,
    Good,
    Bad,
}

/// Outcome of one environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Tensor,
    pub reward: f64,
    pub done: bool,
}

/// Full state of one shooter episode.
///
/// Targets occupy rows `0..height-1`; the agent sits in the bottom row. Every
/// step the agent acts first, then all targets fall one row (those reaching the
/// agent's row are lost) and a new row spawns at the top.
#[derive(Debug, Clone)]
pub struct EnvState {
    spec: TaskSpec,
    rng: ChaCha8Rng,
    /// Row-major `[height - 1][width]` target field.
    targets: Vec<Cell>,
    agent: usize,
    waves: usize,
    steps: usize,
    done: bool,
}

impl EnvState {
    /// Starts an episode. The target field is pre-filled row by row from `seed`.
    pub fn reset(spec: &TaskSpec, seed: u64) -> Result<(Self, Tensor), EnvError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = rng.gen_range(0..spec.width);
        let rows = spec.height - 1;
        let mut state = Self {
            spec: spec.clone(),
            rng,
            targets: vec![Cell::Empty; rows * spec.width],
            agent,
            waves: 0,
            steps: 0,
            done: false,
        };
        let prefill = if spec.waves == 0 { rows } else { rows.min(spec.waves) };
        for r in (rows - prefill..rows).rev() {
            state.spawn_row(r);
        }
        let obs = state.render();
        Ok((state, obs))
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn agent_column(&self) -> usize {
        self.agent
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn waves(&self) -> usize {
        self.waves
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Number of target rows (grid height minus the agent row).
    pub fn target_rows(&self) -> usize {
        self.spec.height - 1
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.targets[row * self.spec.width + col]
    }

    /// Lowest (closest to the agent) target in `col`, as `(row, cell)`.
    pub fn lowest_target(&self, col: usize) -> Option<(usize, Cell)> {
        (0..self.target_rows())
            .rev()
            .map(|r| (r, self.cell(r, col)))
            .find(|(_, c)| *c != Cell::Empty)
    }

    pub fn count(&self, kind: Cell) -> usize {
        self.targets.iter().filter(|&&c| c == kind).count()
    }

    fn spawn_row(&mut self, row: usize) {
        let w = self.spec.width;
        for col in 0..w {
            let cell = if self.rng.gen::<f64>() < self.spec.target_density {
                if self.rng.gen::<f64>() < self.spec.bad_target_fraction {
                    Cell::Bad
                } else {
                    Cell::Good
                }
            } else {
                Cell::Empty
            };
            self.targets[row * w + col] = cell;
        }
        self.waves += 1;
    }

    fn spawning(&self) -> bool {
        self.spec.waves == 0 || self.waves < self.spec.waves
    }

    /// Applies `action`: 0 no-op, 1 shoot, 2 left, 3 right; higher indices are no-ops.
    pub fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if action >= self.spec.action_count {
            return Err(EnvError::InvalidAction {
                action,
                action_count: self.spec.action_count,
            });
        }
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let w = self.spec.width;
        let mut reward = 0.0;
        match action {
            ACTION_SHOOT => {
                if let Some((row, cell)) = self.lowest_target(self.agent) {
                    reward = match cell {
                        Cell::Good => 1.0,
                        Cell::Bad => self.spec.penalty,
                        Cell::Empty => unreachable!(),
                    };
                    self.targets[row * w + self.agent] = Cell::Empty;
                }
            }
            ACTION_LEFT => self.agent = self.agent.saturating_sub(1),
            ACTION_RIGHT => self.agent = (self.agent + 1).min(w - 1),
            _ => {}
        }

        // fall: the bottom target row drops out, everything else shifts down
        let rows = self.target_rows();
        self.targets.copy_within(0..(rows - 1) * w, w);
        self.targets[..w].iter_mut().for_each(|c| *c = Cell::Empty);
        if self.spawning() {
            self.spawn_row(0);
        }

        self.steps += 1;
        let exhausted = !self.spawning() && self.count(Cell::Good) == 0;
        self.done = self.steps >= self.spec.episode_cap || exhausted;
        Ok(StepResult {
            observation: self.render(),
            reward,
            done: self.done,
        })
    }

    /// Grayscale rendering of the grid at `render_side x render_side`, nearest-cell sampling.
    pub fn render(&self) -> Tensor {
        let side = self.spec.render_side;
        let (w, h) = (self.spec.width, self.spec.height);
        let mut pixels = vec![0.0; side * side];
        for py in 0..side {
            let row = py * h / side;
            for px in 0..side {
                let col = px * w / side;
                pixels[py * side + px] = if row == h - 1 {
                    if col == self.agent {
                        SHADE_AGENT
                    } else {
                        0.0
                    }
                } else {
                    match self.cell(row, col) {
                        Cell::Empty => 0.0,
                        Cell::Good => SHADE_GOOD,
                        Cell::Bad => SHADE_BAD,
                    }
                };
            }
        }
        Tensor::new(vec![1, side, side], pixels).expect("render shape")
    }
}

/// Starts an episode; see [`EnvState::reset`].
pub fn env_reset(spec: &TaskSpec, seed: u64) -> Result<(EnvState, Tensor), EnvError> {
    EnvState::reset(spec, seed)
}

/// Advances an episode; see [`EnvState::step`].
pub fn env_step(state: &mut EnvState, action: usize) -> Result<StepResult, EnvError> {
    state.step(action)
}
