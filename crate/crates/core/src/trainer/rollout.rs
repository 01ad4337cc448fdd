use rand::Rng;

use super::returns::{discounted_returns, sample_action, RewardNormalizer};
use super::TrainError;
use crate::envs::{EnvState, TaskSpec};
use crate::model::GtnNetwork;
use crate::nn::{self, LstmState, NodeId, Tape, Tensor};

/// One stored interaction: observation, recurrent state before the step, action, reward.
#[derive(Debug, Clone)]
pub struct Experience {
    pub observation: Tensor,
    pub recurrent_before: Vec<LstmState>,
    pub action: usize,
    /// Normalized reward used for learning.
    pub reward: f64,
    pub raw_reward: f64,
}

/// Experiences collected between two updates.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub steps: Vec<Experience>,
    /// Size of the policy head the actions were drawn from.
    pub action_count: usize,
    pub terminal: bool,
    /// Value of the state after the last step; 0 when terminal.
    pub bootstrap_value: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// Totals for a finished episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub raw_score: f64,
    pub normalized_return: f64,
    pub steps: usize,
}

/// Environment plus the agent-side state that persists across rollouts within an episode.
#[derive(Debug, Clone)]
pub struct WorkerEnv {
    state: EnvState,
    observation: Tensor,
    recurrent: Vec<LstmState>,
    normalizer: RewardNormalizer,
    raw_score: f64,
    normalized_return: f64,
    finished: Option<EpisodeSummary>,
}

impl WorkerEnv {
    pub fn new(spec: &TaskSpec, net: &GtnNetwork, env_seed: u64) -> Result<Self, TrainError> {
        let (state, observation) = EnvState::reset(spec, env_seed)?;
        Ok(Self {
            state,
            observation,
            recurrent: net.initial_recurrent(),
            normalizer: RewardNormalizer::new(),
            raw_score: 0.0,
            normalized_return: 0.0,
            finished: None,
        })
    }

    pub fn spec(&self) -> &TaskSpec {
        self.state.spec()
    }

    /// Summary of the episode that just ended, if the last rollout ended one.
    pub fn finished(&self) -> Option<EpisodeSummary> {
        self.finished
    }

    /// Starts the next episode with the same normalizer.
    pub fn restart(&mut self, net: &GtnNetwork, env_seed: u64) -> Result<(), TrainError> {
        let (state, observation) = EnvState::reset(self.state.spec(), env_seed)?;
        self.state = state;
        self.observation = observation;
        self.recurrent = net.initial_recurrent();
        self.raw_score = 0.0;
        self.normalized_return = 0.0;
        self.finished = None;
        Ok(())
    }

    pub fn normalizer(&self) -> &RewardNormalizer {
        &self.normalizer
    }
}

/// Runs the local network for up to `t_max` steps or until the episode ends.
///
/// Actions are sampled from the policy head matching the task's action count;
/// with probability `epsilon` a uniform action is taken instead.
pub fn collect_rollout<R: Rng + ?Sized>(
    net: &mut GtnNetwork,
    env: &mut WorkerEnv,
    t_max: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<RolloutBuffer, TrainError> {
    if env.finished.is_some() {
        return Err(TrainError::Usage("episode already finished; restart the environment".into()));
    }
    let action_count = env.spec().action_count;
    let mut steps = Vec::with_capacity(t_max);
    let mut terminal = false;
    for _ in 0..t_max.max(1) {
        let out = net.forward(&env.observation, &env.recurrent)?;
        let policy = out
            .policies
            .get(&action_count)
            .ok_or(TrainError::MissingHead(action_count))?;
        let action = if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
            rng.gen_range(0..action_count)
        } else {
            sample_action(policy.data(), rng)
        };
        let result = env.state.step(action)?;
        let reward = env.normalizer.normalize(result.reward);
        env.raw_score += result.reward;
        env.normalized_return += reward;
        steps.push(Experience {
            observation: std::mem::replace(&mut env.observation, result.observation),
            recurrent_before: std::mem::replace(&mut env.recurrent, out.new_recurrent),
            action,
            reward,
            raw_reward: result.reward,
        });
        if result.done {
            terminal = true;
            break;
        }
    }
    let bootstrap_value = if terminal {
        env.finished = Some(EpisodeSummary {
            raw_score: env.raw_score,
            normalized_return: env.normalized_return,
            steps: env.state.steps(),
        });
        env.normalizer.end_episode();
        0.0
    } else {
        net.forward(&env.observation, &env.recurrent)?.value
    };
    Ok(RolloutBuffer {
        steps,
        action_count,
        terminal,
        bootstrap_value,
    })
}

/// Loss terms of one rollout, summed over its steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutLosses {
    /// `-sum log pi(a_t) * A_t`
    pub policy: f64,
    /// `sum (R_t - V_t)^2`
    pub value: f64,
    /// `sum H(pi_t)`
    pub entropy: f64,
    pub returns: Vec<f64>,
    pub values: Vec<f64>,
}

impl RolloutLosses {
    pub fn advantages(&self) -> Vec<f64> {
        self.returns.iter().zip(&self.values).map(|(r, v)| r - v).collect()
    }
}

/// Backpropagates the actor-critic objective of `buffer` through time into
/// `net`'s gradient slots (`+=`; the caller zeroes them).
///
/// The objective is `sum_t [-log pi(a_t) A_t + (R_t - V_t)^2 - beta H(pi_t)]`
/// with `A_t = R_t - V_t` held constant.
pub fn accumulate_gradients(
    buffer: &RolloutBuffer,
    net: &mut GtnNetwork,
    entropy_coeff: f64,
    gamma: f64,
) -> Result<RolloutLosses, TrainError> {
    let Some(first) = buffer.steps.first() else {
        return Err(TrainError::Usage("empty rollout".into()));
    };
    let mut tape = Tape::new();
    let mut recurrent: Vec<(NodeId, NodeId)> = first
        .recurrent_before
        .iter()
        .map(|s| (tape.leaf(s.hidden.clone()), tape.leaf(s.cell.clone())))
        .collect();
    let mut heads = Vec::with_capacity(buffer.len());
    for step in &buffer.steps {
        let obs = tape.leaf(step.observation.clone());
        let nodes = net.forward_on_tape(&mut tape, obs, &recurrent)?;
        let logits = *nodes
            .logits
            .get(&buffer.action_count)
            .ok_or(TrainError::MissingHead(buffer.action_count))?;
        heads.push((logits, nodes.value));
        recurrent = nodes.recurrent;
    }

    let returns = discounted_returns(&buffer.rewards(), buffer.bootstrap_value, gamma);
    let mut losses = RolloutLosses {
        returns: returns.clone(),
        ..RolloutLosses::default()
    };
    let mut seeds = Vec::with_capacity(2 * buffer.len());
    for ((step, &(logits, value)), &ret) in buffer.steps.iter().zip(&heads).zip(&returns) {
        let z = tape.value(logits);
        let p = nn::softmax(z);
        let logp = nn::log_softmax(z);
        let v = tape.value(value).data()[0];
        let advantage = ret - v;
        let entropy: f64 = -p.data().iter().zip(logp.data()).map(|(a, b)| a * b).sum::<f64>();

        let mut dz = vec![0.0; z.len()];
        for (j, d) in dz.iter_mut().enumerate() {
            let onehot = if j == step.action { 1.0 } else { 0.0 };
            let pj = p.data()[j];
            *d = advantage * (pj - onehot) + entropy_coeff * pj * (logp.data()[j] + entropy);
        }
        seeds.push((logits, Tensor::vector(dz)));
        seeds.push((value, Tensor::vector(vec![-2.0 * advantage])));

        losses.policy -= logp.data()[step.action] * advantage;
        losses.value += advantage * advantage;
        losses.entropy += entropy;
        losses.values.push(v);
    }
    tape.backward(net.params_mut(), &seeds)?;
    Ok(losses)
}
