use gtn::envs::TaskSpec;
use gtn::model::{encode, GtnConfig, Precision};
use gtn::trainer::{train, write_log, TrainConfig, TrainError};

fn model() -> GtnConfig {
    GtnConfig {
        levels: 2,
        layers: 1,
        channels: 4,
        lstm_size: 8,
        concat_size: 8,
        input_side: 6,
        action_space_sizes: vec![2, 4, 6],
        ..GtnConfig::default()
    }
}

fn task(tier: u8) -> TaskSpec {
    TaskSpec { width: 6, height: 6, render_side: 6, episode_cap: 30, ..TaskSpec::tier(tier) }
}

fn config(tasks: Vec<TaskSpec>, workers: usize, episodes: usize, seed: u64) -> TrainConfig {
    TrainConfig { tasks, workers, episodes_per_task: episodes, seed, t_max: 5, ..TrainConfig::default() }
}

#[test]
fn single_worker_runs_are_bitwise_reproducible() {
    let cfg = config(vec![task(2)], 1, 6, 42);
    let a = train(&model(), &cfg).unwrap();
    let b = train(&model(), &cfg).unwrap();
    let bytes = |o: &gtn::trainer::TrainOutcome| encode(&model(), &o.store.snapshot().0, Precision::F64);
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(a.log, b.log);
    let c = train(&model(), &TrainConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn every_task_reaches_its_budget() {
    let cfg = config(vec![task(1), task(2), task(3)], 4, 3, 0);
    let out = train(&model(), &cfg).unwrap();
    assert_eq!(out.store.episodes_completed(), vec![3, 3, 3]);
    for t in 0..3 {
        let mut eps: Vec<usize> = out.task_log(t).map(|r| r.episode).collect();
        eps.sort_unstable();
        assert_eq!(eps, vec![0, 1, 2]);
    }
    assert!(out.store.all_finite());
    assert_eq!(out.store.torn_snapshots(), 0);
    // update counters in the log never exceed the final count
    assert!(out.log.iter().all(|r| r.update_counter <= out.store.update_counter()));
}

#[test]
fn update_limit_stops_training() {
    let cfg = TrainConfig { max_updates: Some(25), ..config(vec![task(1), task(2)], 3, 1000, 1) };
    let out = train(&model(), &cfg).unwrap();
    assert_eq!(out.store.update_counter(), 25);
}

#[test]
fn snapshots_are_ordered() {
    let cfg = TrainConfig { snapshot_every: Some(2), ..config(vec![task(1)], 1, 6, 3) };
    let out = train(&model(), &cfg).unwrap();
    let eps: Vec<usize> = out.snapshots.iter().map(|s| s.episodes_completed).collect();
    assert_eq!(eps, vec![2, 4, 6]);
    assert!(out.snapshots.windows(2).all(|w| w[0].update_counter <= w[1].update_counter));
}

#[test]
fn log_is_json_lines() {
    let out = train(&model(), &config(vec![task(1)], 1, 2, 0)).unwrap();
    let mut buf = Vec::new();
    write_log(&out.log, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["raw_score"].is_number());
    }
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    let m = model();
    let missing_head = GtnConfig { action_space_sizes: vec![2], ..model() };
    assert!(matches!(train(&missing_head, &config(vec![task(2)], 1, 1, 0)), Err(TrainError::Config(_))));
    assert!(matches!(train(&m, &config(vec![task(1), task(2)], 1, 1, 0)), Err(TrainError::Config(_))));
    let wrong_side = TaskSpec { render_side: 8, ..task(1) };
    assert!(matches!(train(&m, &config(vec![wrong_side], 1, 1, 0)), Err(TrainError::Config(_))));
    let bad_gamma = TrainConfig { gamma: 1.5, ..config(vec![task(1)], 1, 1, 0) };
    assert!(matches!(train(&m, &bad_gamma), Err(TrainError::Config(_))));
    assert!(matches!(train(&m, &config(vec![], 1, 1, 0)), Err(TrainError::Config(_))));
}

#[test]
fn oversubscribed_workers_stress() {
    let cfg = TrainConfig { max_updates: Some(300), ..config(vec![task(1), task(2), task(3)], 12, 1000, 9) };
    let out = train(&model(), &cfg).unwrap();
    assert!(out.store.all_finite());
    assert_eq!(out.store.torn_snapshots(), 0);
    assert_eq!(out.store.update_counter(), 300);
}
