use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Mutex, MutexGuard};

use super::TrainError;
use crate::model::{GtnConfig, GtnNetwork};
use crate::nn::{ParameterSet, RmsProp, RmsPropConfig};

/// Order-sensitive digest of every parameter bit pattern.
pub fn parameter_digest(params: &ParameterSet) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (_, value, _) in params.iter() {
        for x in value.data() {
            h ^= x.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

struct Inner {
    params: ParameterSet,
    optimizer: RmsProp,
    update_counter: u64,
    /// Digest of `params` written at the end of each update.
    digest: u64,
}

/// The shared global parameters and optimizer state.
///
/// All reads and writes of the parameters go through one lock, so a snapshot
/// always corresponds to a single update counter value. Every snapshot
/// re-derives the parameter digest and compares it with the one recorded by the
/// last update; a mismatch is counted as a torn snapshot.
pub struct GlobalStore {
    inner: Mutex<Inner>,
    max_grad_norm: Option<f64>,
    max_updates: Option<u64>,
    episode_budget: usize,
    claimed: Vec<AtomicUsize>,
    completed: Vec<AtomicUsize>,
    total_completed: AtomicUsize,
    rejected: AtomicU64,
    torn: AtomicU64,
    abort: AtomicBool,
}

impl std::fmt::Debug for GlobalStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GlobalStore")
            .field("update_counter", &self.update_counter())
            .field("episodes_completed", &self.episodes_completed())
            .field("rejected_updates", &self.rejected_updates())
            .finish()
    }
}

impl GlobalStore {
    /// Store for `tasks` tasks with `episode_budget` episodes each.
    pub fn new(
        params: ParameterSet,
        optimizer: RmsPropConfig,
        tasks: usize,
        episode_budget: usize,
        max_grad_norm: Option<f64>,
        max_updates: Option<u64>,
    ) -> Self {
        let optimizer = RmsProp::new(optimizer, &params);
        let digest = parameter_digest(&params);
        Self {
            inner: Mutex::new(Inner {
                params,
                optimizer,
                update_counter: 0,
                digest,
            }),
            max_grad_norm,
            max_updates,
            episode_budget,
            claimed: (0..tasks).map(|_| AtomicUsize::new(0)).collect(),
            completed: (0..tasks).map(|_| AtomicUsize::new(0)).collect(),
            total_completed: AtomicUsize::new(0),
            rejected: AtomicU64::new(0),
            torn: AtomicU64::new(0),
            abort: AtomicBool::new(false),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // poisoning only means a worker panicked; the store is still readable
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Copies the current parameters into `dst` and returns the update counter they belong to.
    pub fn snapshot_into(&self, dst: &mut ParameterSet) -> Result<u64, TrainError> {
        let inner = self.lock();
        dst.copy_values_from(&inner.params)?;
        if parameter_digest(dst) != inner.digest {
            self.torn.fetch_add(1, Ordering::Relaxed);
        }
        Ok(inner.update_counter)
    }

    /// Clone of the current parameters (values only) with their update counter.
    pub fn snapshot(&self) -> (ParameterSet, u64) {
        let inner = self.lock();
        (inner.params.clone(), inner.update_counter)
    }

    /// Applies the gradient slots of `grads` with one RMSProp step.
    ///
    /// Returns `false` without touching the parameters when a gradient is not
    /// finite or the update limit has been reached. Gradients whose global norm
    /// exceeds the configured maximum are rescaled to it.
    pub fn apply_update(&self, grads: &ParameterSet) -> Result<bool, TrainError> {
        if !grads.grads_finite() {
            let n = self.rejected.fetch_add(1, Ordering::Relaxed) + 1;
            log::warn!("rejected update with non-finite gradient ({n} so far)");
            return Ok(false);
        }
        let scale = match self.max_grad_norm {
            Some(max) => {
                let norm = grads.grad_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let mut inner = self.lock();
        if self.max_updates.is_some_and(|m| inner.update_counter >= m) {
            return Ok(false);
        }
        let Inner { params, optimizer, .. } = &mut *inner;
        optimizer.step_scaled(params, grads, scale)?;
        inner.digest = parameter_digest(&inner.params);
        inner.update_counter += 1;
        Ok(true)
    }

    pub fn update_counter(&self) -> u64 {
        self.lock().update_counter
    }

    pub fn update_limit_reached(&self) -> bool {
        self.max_updates.is_some_and(|m| self.update_counter() >= m)
    }

    /// Reserves the next episode index of `task`, or `None` when its budget is spent.
    pub fn claim_episode(&self, task: usize) -> Option<usize> {
        let slot = self.claimed.get(task)?;
        let mut current = slot.load(Ordering::Relaxed);
        loop {
            if current >= self.episode_budget {
                return None;
            }
            match slot.compare_exchange_weak(current, current + 1, Ordering::AcqRel, Ordering::Relaxed) {
                Ok(_) => return Some(current),
                Err(seen) => current = seen,
            }
        }
    }

    /// Counts a finished episode of `task`; returns the total finished over all tasks.
    pub fn complete_episode(&self, task: usize) -> usize {
        self.completed[task].fetch_add(1, Ordering::AcqRel);
        self.total_completed.fetch_add(1, Ordering::AcqRel) + 1
    }

    pub fn episodes_completed(&self) -> Vec<usize> {
        self.completed.iter().map(|c| c.load(Ordering::Acquire)).collect()
    }

    pub fn rejected_updates(&self) -> u64 {
        self.rejected.load(Ordering::Relaxed)
    }

    pub fn torn_snapshots(&self) -> u64 {
        self.torn.load(Ordering::Relaxed)
    }

    pub fn all_finite(&self) -> bool {
        self.lock().params.all_finite()
    }

    pub(crate) fn request_abort(&self) {
        self.abort.store(true, Ordering::Release);
    }

    pub(crate) fn aborted(&self) -> bool {
        self.abort.load(Ordering::Acquire)
    }

    pub fn into_params(self) -> ParameterSet {
        self.inner.into_inner().unwrap_or_else(|e| e.into_inner()).params
    }

    /// A network built from the current parameters.
    pub fn network(&self, config: &GtnConfig) -> Result<GtnNetwork, TrainError> {
        let (params, _) = self.snapshot();
        Ok(GtnNetwork::from_params(config.clone(), params)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{rmsprop_update, Tensor};

    fn params(values: &[f64]) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::vector(values.to_vec())).unwrap();
        p
    }

    fn with_grad(values: &[f64], grad: &[f64]) -> ParameterSet {
        let mut p = params(values);
        p.grad_mut(0).data_mut().copy_from_slice(grad);
        p
    }

    #[test]
    fn zero_gradient_counts_but_keeps_values() {
        let store = GlobalStore::new(params(&[1.0, -2.0]), RmsPropConfig::default(), 1, 1, None, None);
        assert!(store.apply_update(&with_grad(&[0.0, 0.0], &[0.0, 0.0])).unwrap());
        let (p, counter) = store.snapshot();
        assert_eq!(counter, 1);
        assert_eq!(p.value(0).data(), &[1.0, -2.0]);
    }

    #[test]
    fn two_updates_follow_scripted_rmsprop() {
        let cfg = RmsPropConfig::default();
        let store = GlobalStore::new(params(&[0.5, 0.1]), cfg, 1, 1, None, None);
        let g = [0.3, -1.2];
        store.apply_update(&with_grad(&[0.0, 0.0], &g)).unwrap();
        store.apply_update(&with_grad(&[0.0, 0.0], &g)).unwrap();

        let mut p = [0.5, 0.1];
        let mut acc = [0.0, 0.0];
        for _ in 0..2 {
            for i in 0..2 {
                acc[i] = cfg.decay * acc[i] + (1.0 - cfg.decay) * g[i] * g[i];
                p[i] -= cfg.learning_rate * g[i] / (acc[i] + cfg.epsilon).sqrt();
            }
        }
        let (got, counter) = store.snapshot();
        assert_eq!(counter, 2);
        for i in 0..2 {
            assert!((got.value(0).data()[i] - p[i]).abs() < 1e-15);
        }
        // and the slice routine agrees with the loop above
        let mut q = [0.5, 0.1];
        let mut a = [0.0, 0.0];
        rmsprop_update(&mut q, &g, &mut a, &cfg);
        rmsprop_update(&mut q, &g, &mut a, &cfg);
        assert_eq!(q, p);
    }

    #[test]
    fn nan_gradient_is_rejected_bitwise() {
        let store = GlobalStore::new(params(&[1.0, 2.0]), RmsPropConfig::default(), 1, 1, None, None);
        let before = store.snapshot().0;
        assert!(!store.apply_update(&with_grad(&[0.0, 0.0], &[f64::NAN, 1.0])).unwrap());
        let (after, counter) = store.snapshot();
        assert_eq!(counter, 0);
        assert_eq!(store.rejected_updates(), 1);
        for (a, b) in before.value(0).data().iter().zip(after.value(0).data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn clipping_rescales_large_gradients() {
        let cfg = RmsPropConfig::default();
        let clipped = GlobalStore::new(params(&[0.0]), cfg, 1, 1, Some(1.0), None);
        clipped.apply_update(&with_grad(&[0.0], &[10.0])).unwrap();
        let unit = GlobalStore::new(params(&[0.0]), cfg, 1, 1, None, None);
        unit.apply_update(&with_grad(&[0.0], &[1.0])).unwrap();
        assert_eq!(clipped.snapshot().0.value(0).data(), unit.snapshot().0.value(0).data());
    }

    #[test]
    fn update_limit_is_exact() {
        let store = GlobalStore::new(params(&[0.0]), RmsPropConfig::default(), 1, 1, None, Some(2));
        let g = with_grad(&[0.0], &[1.0]);
        assert!(store.apply_update(&g).unwrap());
        assert!(store.apply_update(&g).unwrap());
        assert!(!store.apply_update(&g).unwrap());
        assert_eq!(store.update_counter(), 2);
        assert!(store.update_limit_reached());
    }

    #[test]
    fn episode_claims_respect_budget() {
        let store = GlobalStore::new(params(&[0.0]), RmsPropConfig::default(), 2, 3, None, None);
        let claimed: Vec<_> = (0..5).filter_map(|_| store.claim_episode(1)).collect();
        assert_eq!(claimed, vec![0, 1, 2]);
        assert_eq!(store.claim_episode(0), Some(0));
        assert_eq!(store.claim_episode(7), None);
    }

    #[test]
    fn snapshot_matches_digest() {
        let store = GlobalStore::new(params(&[1.0, 2.0]), RmsPropConfig::default(), 1, 1, None, None);
        store.apply_update(&with_grad(&[0.0, 0.0], &[0.1, 0.2])).unwrap();
        let mut local = params(&[0.0, 0.0]);
        assert_eq!(store.snapshot_into(&mut local).unwrap(), 1);
        assert_eq!(store.torn_snapshots(), 0);
        assert_eq!(parameter_digest(&local), parameter_digest(&store.snapshot().0));
    }
}
