#![allow(dead_code)]

use gtn::model::{GtnConfig, GtnNetwork};
use gtn::nn::{self, finite_difference_gradient, max_relative_error, LstmState, ParameterSet, Tensor, DEFAULT_STEP};
use gtn::trainer::{accumulate_gradients, discounted_returns, Experience, RolloutBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Actor-critic objective of `buffer` recomputed with plain forward passes.
/// `advantages` are held fixed, as in the analytic gradient.
pub fn objective(
    net: &mut GtnNetwork,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    entropy_coeff: f64,
    gamma: f64,
) -> f64 {
    let returns = discounted_returns(&buffer.rewards(), buffer.bootstrap_value, gamma);
    let mut state = buffer.steps[0].recurrent_before.clone();
    let mut total = 0.0;
    for ((step, &ret), &adv) in buffer.steps.iter().zip(&returns).zip(advantages) {
        let out = net.forward(&step.observation, &state).unwrap();
        let logp = nn::log_softmax(&out.logits[&buffer.action_count]);
        let p = nn::softmax(&out.logits[&buffer.action_count]);
        let entropy: f64 = -p.data().iter().zip(logp.data()).map(|(a, b)| a * b).sum::<f64>();
        total += -logp.data()[step.action] * adv + (ret - out.value).powi(2) - entropy_coeff * entropy;
        state = out.new_recurrent;
    }
    total
}

/// A rollout buffer over dense random observations, entering with a random
/// nonzero recurrent state.
pub fn synthetic_buffer(config: &GtnConfig, steps: usize, seed: u64) -> RolloutBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let side = config.input_side;
    let mut random = |n: usize, lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|_| rng.gen_range(lo..hi)).collect() };
    let recurrent: Vec<LstmState> = (0..config.levels)
        .map(|_| LstmState {
            hidden: Tensor::vector(random(config.lstm_size, -0.5, 0.5)),
            cell: Tensor::vector(random(config.lstm_size, -1.0, 1.0)),
        })
        .collect();
    let action_count = config.action_space_sizes[0];
    let steps = (0..steps)
        .map(|t| Experience {
            observation: Tensor::new(vec![1, side, side], random(side * side, 0.0, 1.0)).unwrap(),
            recurrent_before: recurrent.clone(),
            action: (t * 7 + seed as usize) % action_count,
            reward: 0.7 - 0.4 * t as f64,
            raw_reward: 0.0,
        })
        .collect();
    RolloutBuffer {
        steps,
        action_count,
        terminal: false,
        bootstrap_value: 0.3,
    }
}

/// Network with random biases, so pre-activations do not pile up at the ReLU kink.
pub fn jittered(config: GtnConfig, seed: u64) -> GtnNetwork {
    let mut net = GtnNetwork::build(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    let names: Vec<String> = net.params().names().filter(|n| n.ends_with("bias")).map(String::from).collect();
    for name in names {
        for b in net.params_mut().get_mut(&name).unwrap().data_mut() {
            *b += rng.gen_range(-0.5..0.5);
        }
    }
    net
}

/// Analytic versus finite-difference gradient of the objective on a synthetic
/// rollout of `steps` steps; returns the max relative error and the worst parameter.
pub fn rollout_gradient_error(config: GtnConfig, steps: usize, entropy_coeff: f64, seed: u64) -> (f64, String) {
    let gamma = 0.99;
    let buffer = synthetic_buffer(&config, steps, seed);
    let mut net = jittered(config.clone(), seed);
    net.params_mut().zero_grads();
    let losses = accumulate_gradients(&buffer, &mut net, entropy_coeff, gamma).unwrap();
    let advantages = losses.advantages();
    let analytic = net.params().clone();

    let mut probe = jittered(config, seed);
    let numeric = finite_difference_gradient(
        |p: &ParameterSet| {
            probe.load_values(p).unwrap();
            objective(&mut probe, &buffer, &advantages, entropy_coeff, gamma)
        },
        net.params(),
        DEFAULT_STEP,
    );
    if std::env::var("GRAD_DEBUG").is_ok() {
        for ((name, _, ga), (_, _, gn)) in analytic.iter().zip(numeric.iter()) {
            for (i, (&a, &n)) in ga.data().iter().zip(gn.data()).enumerate() {
                if nn::relative_error(a, n) > 1e-5 {
                    println!("  {name}[{i}] analytic {a:e} numeric {n:e}");
                }
            }
        }
    }
    max_relative_error(&analytic, &numeric)
}

/// Tier-1 task on a small grid, rendered at `side`.
pub fn small_tier1(side: usize) -> gtn::envs::TaskSpec {
    gtn::envs::TaskSpec { width: 6, height: 6, render_side: side, episode_cap: 40, ..gtn::envs::TaskSpec::tier(1) }
}

/// Two-level tier-1 network whose decisions depend on level 2 only.
///
/// Level 1 is cut off from the merge (`T_1 = 0`). Level 2 has all-zero LSTM
/// parameters, so its clean output is exactly zero, and only its first unit
/// feeds merged unit 0 (`T_2[0][0] = 1`). The merge bias holds unit 0 at 1 and
/// the head shoots iff `10 H_0 - 5 > 0`: always when clean, and only while
/// level-2 noise keeps `1 + z > 0.5` when perturbed.
pub fn raps_fixture() -> GtnNetwork {
    let config = GtnConfig {
        levels: 2,
        layers: 1,
        channels: 2,
        lstm_size: 4,
        concat_size: 4,
        input_side: 6,
        action_space_sizes: vec![2],
        ..GtnConfig::default()
    };
    let mut net = GtnNetwork::build(config, 0).unwrap();
    let p = net.params_mut();
    let mut set = |name: &str, f: &dyn Fn(&mut [f64])| f(p.get_mut(name).unwrap().data_mut());
    let zero = |v: &mut [f64]| v.fill(0.0);
    for name in ["merge.t1", "level2.lstm.input_weights", "level2.lstm.hidden_weights", "level2.lstm.bias"] {
        set(name, &zero);
    }
    set("merge.t2", &|v| {
        v.fill(0.0);
        v[0] = 1.0;
    });
    set("merge.bias", &|v| {
        v.fill(0.0);
        v[0] = 1.0;
    });
    // weight is [A, 2]: row 0 drives the two logits
    set("head.policy2.weight", &|v| {
        v.fill(0.0);
        v[1] = 10.0;
    });
    set("head.policy2.bias", &|v| v.copy_from_slice(&[0.0, -5.0]));
    net
}

/// Small grid, one pixel per cell, short episodes: the scale the learning checks run at.
pub fn desk_task(tier: u8) -> gtn::envs::TaskSpec {
    gtn::envs::TaskSpec { width: 6, height: 6, render_side: 6, episode_cap: 40, ..gtn::envs::TaskSpec::tier(tier) }
}

pub fn desk_model(levels: usize, layers: usize) -> GtnConfig {
    GtnConfig {
        levels,
        layers,
        channels: 8,
        lstm_size: 32,
        concat_size: 32,
        input_side: 6,
        action_space_sizes: vec![2, 4, 6],
        ..GtnConfig::default()
    }
}

/// Short-horizon hyperparameters that learn the aiming tiers within a few
/// thousand episodes.
pub fn desk_train(tasks: Vec<gtn::envs::TaskSpec>, episodes: usize, seed: u64) -> gtn::trainer::TrainConfig {
    gtn::trainer::TrainConfig {
        workers: tasks.len(),
        tasks,
        episodes_per_task: episodes,
        seed,
        t_max: 5,
        gamma: 0.8,
        optimizer: nn::RmsPropConfig { learning_rate: 1e-3, decay: 0.99, epsilon: 1e-5 },
        ..gtn::trainer::TrainConfig::default()
    }
}
