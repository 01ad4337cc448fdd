//! Asynchronous advantage actor-critic training of one tower network on several tasks.
//!
//! A passive global store holds the shared parameters and RMSProp state. Each
//! worker repeatedly copies the global parameters into its private network,
//! plays up to `t_max` steps of its own environment, backpropagates the
//! actor-critic loss through time and applies the accumulated gradient to the
//! store. Worker `i` always plays task `i mod tasks`.

mod returns;
mod rollout;
mod store;

pub use returns::{discounted_returns, greedy_action, normalize_reward, sample_action, RewardNormalizer};
pub use rollout::{
    accumulate_gradients, collect_rollout, EpisodeSummary, Experience, RolloutBuffer, RolloutLosses, WorkerEnv,
};
pub use store::{parameter_digest, GlobalStore};

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{EnvError, TaskSpec};
use crate::model::{GtnConfig, GtnNetwork, ModelError};
use crate::nn::{NnError, ParameterSet, RmsPropConfig};
use crate::seeding;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("network has no policy head of size {0}")]
    MissingHead(usize),
    #[error("worker {worker} panicked: {message}")]
    WorkerPanicked { worker: usize, message: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    #[serde(skip)]
    pub tasks: Vec<TaskSpec>,
    pub workers: usize,
    pub t_max: usize,
    pub gamma: f64,
    /// Episode budget of every task.
    pub episodes_per_task: usize,
    pub entropy_coeff: f64,
    pub optimizer: RmsPropConfig,
    /// Global gradient norm above which updates are rescaled; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Probability of replacing the sampled action by a uniform one. Off by default.
    pub epsilon_greedy: f64,
    pub seed: u64,
    /// Stop after this many global updates even if episodes remain.
    pub max_updates: Option<u64>,
    /// Keep a parameter snapshot every this many finished episodes (all tasks together).
    pub snapshot_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tasks: Vec::new(),
            workers: 1,
            t_max: 20,
            gamma: 0.99,
            episodes_per_task: 1000,
            entropy_coeff: 0.01,
            optimizer: RmsPropConfig::default(),
            max_grad_norm: 40.0,
            epsilon_greedy: 0.0,
            seed: 0,
            max_updates: None,
            snapshot_every: None,
        }
    }
}

impl TrainConfig {
    /// Checks the hyperparameters and their compatibility with `model`.
    pub fn validate(&self, model: &GtnConfig) -> Result<(), TrainError> {
        model.validate()?;
        let bad = |msg: String| Err(TrainError::Config(msg));
        if self.tasks.is_empty() {
            return bad("at least one task is required".into());
        }
        if self.workers < self.tasks.len() {
            return bad(format!(
                "{} workers cannot cover {} tasks; worker i plays task i mod #tasks",
                self.workers,
                self.tasks.len()
            ));
        }
        if self.t_max == 0 {
            return bad("t_max must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.entropy_coeff >= 0.0) {
            return bad(format!("entropy_coeff must be non-negative, got {}", self.entropy_coeff));
        }
        if !(0.0..=1.0).contains(&self.epsilon_greedy) {
            return bad(format!("epsilon_greedy must lie in [0, 1], got {}", self.epsilon_greedy));
        }
        if !(self.max_grad_norm >= 0.0) || !self.max_grad_norm.is_finite() {
            return bad(format!("max_grad_norm must be finite and non-negative, got {}", self.max_grad_norm));
        }
        if self.snapshot_every == Some(0) {
            return bad("snapshot_every must be positive".into());
        }
        let opt = &self.optimizer;
        if !(opt.learning_rate > 0.0) || !(0.0..1.0).contains(&opt.decay) || !(opt.epsilon > 0.0) {
            return bad("optimizer needs learning_rate > 0, decay in [0, 1), epsilon > 0".into());
        }
        for (i, task) in self.tasks.iter().enumerate() {
            task.validate()?;
            if !model.action_space_sizes.contains(&task.action_count) {
                return bad(format!(
                    "task {i} has {} actions but the model heads are {:?}",
                    task.action_count, model.action_space_sizes
                ));
            }
            if task.render_side != model.input_side {
                return bad(format!(
                    "task {i} renders {}x{} but the model expects {}x{}",
                    task.render_side, task.render_side, model.input_side, model.input_side
                ));
            }
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task_id: usize,
    pub episode: usize,
    pub update_counter: u64,
    pub raw_score: f64,
    pub normalized_return: f64,
}

/// Parameters captured during training.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub episodes_completed: usize,
    pub update_counter: u64,
    pub params: ParameterSet,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub store: GlobalStore,
    /// Episode records in completion order.
    pub log: Vec<EpisodeRecord>,
    /// Snapshots in ascending episode order.
    pub snapshots: Vec<Snapshot>,
}

impl TrainOutcome {
    /// Final network.
    pub fn network(&self, model: &GtnConfig) -> Result<GtnNetwork, TrainError> {
        self.store.network(model)
    }

    /// Episode records of one task.
    pub fn task_log(&self, task: usize) -> impl Iterator<Item = &EpisodeRecord> {
        self.log.iter().filter(move |r| r.task_id == task)
    }
}

/// Writes `records` as JSON lines.
pub fn write_log<W: Write>(records: &[EpisodeRecord], mut out: W) -> Result<(), TrainError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Environment seed of episode `episode` of task `task`.
pub fn training_episode_seed(seed: u64, task: usize, episode: usize) -> u64 {
    seeding::derive(seeding::derive(seed, 0x7a5c_0000 + task as u64), episode as u64)
}

/// Trains a freshly initialized network.
pub fn train(model: &GtnConfig, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate(model)?;
    let init = GtnNetwork::build(model.clone(), seeding::derive(config.seed, 1))?;
    train_from(init, config)
}

/// Trains starting from the parameters of `init`.
pub fn train_from(init: GtnNetwork, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let model = init.config().clone();
    config.validate(&model)?;
    let store = GlobalStore::new(
        init.into_params(),
        config.optimizer,
        config.tasks.len(),
        config.episodes_per_task,
        (config.max_grad_norm > 0.0).then_some(config.max_grad_norm),
        config.max_updates,
    );
    let log = Mutex::new(Vec::new());
    let snapshots = Mutex::new(Vec::new());

    let results: Vec<Result<(), TrainError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.workers)
            .map(|worker| {
                let (store, log, snapshots, model) = (&store, &log, &snapshots, &model);
                scope.spawn(move || {
                    let run = panic::catch_unwind(AssertUnwindSafe(|| {
                        worker_loop(worker, model, config, store, log, snapshots)
                    }));
                    let result = match run {
                        Ok(r) => r,
                        Err(payload) => Err(TrainError::WorkerPanicked {
                            worker,
                            message: panic_message(payload.as_ref()),
                        }),
                    };
                    if result.is_err() {
                        store.request_abort();
                    }
                    result
                })
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(worker, h)| {
                h.join().unwrap_or_else(|payload| {
                    Err(TrainError::WorkerPanicked {
                        worker,
                        message: panic_message(payload.as_ref()),
                    })
                })
            })
            .collect()
    });
    for r in results {
        r?;
    }

    let mut snapshots = snapshots.into_inner().unwrap_or_else(|e| e.into_inner());
    snapshots.sort_by_key(|s: &Snapshot| s.episodes_completed);
    log::info!(
        "training finished: {} updates, episodes per task {:?}",
        store.update_counter(),
        store.episodes_completed()
    );
    Ok(TrainOutcome {
        log: log.into_inner().unwrap_or_else(|e| e.into_inner()),
        snapshots,
        store,
    })
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".into()
    }
}

fn worker_loop(
    worker: usize,
    model: &GtnConfig,
    config: &TrainConfig,
    store: &GlobalStore,
    log: &Mutex<Vec<EpisodeRecord>>,
    snapshots: &Mutex<Vec<Snapshot>>,
) -> Result<(), TrainError> {
    let task = worker % config.tasks.len();
    let spec = &config.tasks[task];
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(config.seed, 0x3000 + worker as u64));
    let (params, _) = store.snapshot();
    let mut local = GtnNetwork::from_params(model.clone(), params)?;

    let Some(mut episode) = store.claim_episode(task) else {
        return Ok(());
    };
    let mut env = WorkerEnv::new(spec, &local, training_episode_seed(config.seed, task, episode))?;
    while !store.aborted() && !store.update_limit_reached() {
        store.snapshot_into(local.params_mut())?;
        local.params_mut().zero_grads();

        let buffer = collect_rollout(&mut local, &mut env, config.t_max, config.epsilon_greedy, &mut rng)?;
        accumulate_gradients(&buffer, &mut local, config.entropy_coeff, config.gamma)?;
        store.apply_update(local.params())?;

        if let Some(summary) = env.finished() {
            let (update_counter, total) = (store.update_counter(), store.complete_episode(task));
            log.lock().unwrap_or_else(|e| e.into_inner()).push(EpisodeRecord {
                task_id: task,
                episode,
                update_counter,
                raw_score: summary.raw_score,
                normalized_return: summary.normalized_return,
            });
            if config.snapshot_every.is_some_and(|k| total % k == 0) {
                let (params, update_counter) = store.snapshot();
                snapshots.lock().unwrap_or_else(|e| e.into_inner()).push(Snapshot {
                    episodes_completed: total,
                    update_counter,
                    params,
                });
            }
            if total % 500 == 0 {
                log::info!("{total} episodes, {update_counter} updates");
            }
            match store.claim_episode(task) {
                Some(next) => {
                    episode = next;
                    env.restart(&local, training_episode_seed(config.seed, task, episode))?;
                }
                None => break,
            }
        }
    }
    Ok(())
}
