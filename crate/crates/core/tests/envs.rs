use gtn::envs::{
    oracle_action, oracle_score, random_baseline_score, run_episode, EnvError, EnvState, TaskSpec, ACTION_LEFT,
    ACTION_NOOP, ACTION_SHOOT, SHADE_AGENT, SHADE_GOOD,
};

fn rewards(spec: &TaskSpec, seed: u64, actions: &[usize]) -> (Vec<f64>, bool) {
    let (mut state, _) = EnvState::reset(spec, seed).unwrap();
    let mut out = Vec::new();
    let mut done = false;
    for &a in actions {
        let step = state.step(a).unwrap();
        out.push(step.reward);
        done = step.done;
        if done {
            break;
        }
    }
    (out, done)
}

#[test]
fn dense_column_pays_every_shot() {
    let spec = TaskSpec { width: 3, height: 4, episode_cap: 5, ..TaskSpec::tier(1) };
    let actions = [ACTION_SHOOT, ACTION_NOOP, ACTION_SHOOT, ACTION_NOOP, ACTION_SHOOT];
    for seed in 0..5 {
        assert_eq!(rewards(&spec, seed, &actions), (vec![1.0, 0.0, 1.0, 0.0, 1.0], true));
    }
}

#[test]
fn single_wave_ends_when_targets_fall_out() {
    // prefilled waves sit in the lowest target rows and fall one row per step
    let spec = TaskSpec { width: 2, height: 3, waves: 1, episode_cap: 10, ..TaskSpec::tier(1) };
    assert_eq!(rewards(&spec, 3, &[ACTION_SHOOT, ACTION_SHOOT]), (vec![1.0], true));
    let spec = TaskSpec { height: 4, waves: 2, ..spec };
    assert_eq!(rewards(&spec, 3, &[ACTION_NOOP, ACTION_SHOOT, ACTION_SHOOT]), (vec![0.0, 1.0], true));
}

#[test]
fn all_bad_field_charges_the_penalty() {
    let spec = TaskSpec {
        width: 4,
        height: 5,
        target_density: 1.0,
        bad_target_fraction: 1.0,
        penalty: -0.5,
        episode_cap: 6,
        ..TaskSpec::tier(3)
    };
    let (r, done) = rewards(&spec, 1, &[ACTION_SHOOT; 6]);
    assert_eq!(r, vec![-0.5; 6]);
    assert!(done);
    assert_eq!(oracle_score(&spec, 3, 5, 0).unwrap(), 0.0);
    assert_eq!(oracle_score(&spec, 2, 5, 0).unwrap(), -3.0);
}

#[test]
fn tier1_oracle_scores_the_cap() {
    let spec = TaskSpec { episode_cap: 40, ..TaskSpec::tier(1) };
    assert_eq!(oracle_score(&spec, 1, 10, 7).unwrap(), 40.0);
    let base = random_baseline_score(&spec, 200, 7).unwrap();
    assert!((base - 20.0).abs() < 1.5, "{base}");
}

#[test]
fn dense_render_matches_grid() {
    let spec = TaskSpec { width: 3, height: 3, render_side: 3, ..TaskSpec::tier(1) };
    let (state, obs) = EnvState::reset(&spec, 2).unwrap();
    let px = obs.data();
    assert_eq!(obs.shape(), &[1, 3, 3]);
    assert!(px[..6].iter().all(|&v| v == SHADE_GOOD));
    for col in 0..3 {
        let want = if col == state.agent_column() { SHADE_AGENT } else { 0.0 };
        assert_eq!(px[6 + col], want);
    }
}

#[test]
fn layouts_depend_only_on_seed() {
    let spec = TaskSpec { width: 6, height: 6, episode_cap: 30, ..TaskSpec::tier(3) };
    let play = |seed| run_episode(&spec, seed, |s, _| oracle_action(3, s)).unwrap();
    assert_eq!(play(11), play(11));
    let scores: Vec<f64> = (0..8).map(play).collect();
    assert!(scores.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn movement_and_errors() {
    let spec = TaskSpec { width: 1, height: 3, ..TaskSpec::tier(2) };
    let (mut state, _) = EnvState::reset(&spec, 0).unwrap();
    state.step(ACTION_LEFT).unwrap();
    assert_eq!(state.agent_column(), 0);
    assert_eq!(
        state.step(4).unwrap_err(),
        EnvError::InvalidAction { action: 4, action_count: 4 }
    );
    let spec = TaskSpec { episode_cap: 1, ..spec };
    let (mut state, _) = EnvState::reset(&spec, 0).unwrap();
    assert!(state.step(ACTION_NOOP).unwrap().done);
    assert_eq!(state.step(ACTION_NOOP).unwrap_err(), EnvError::EpisodeOver);
}

#[test]
fn invalid_specs_are_rejected() {
    let cases = [
        TaskSpec { tier: 4, ..TaskSpec::tier(1) },
        TaskSpec { width: 0, ..TaskSpec::tier(1) },
        TaskSpec { target_density: 0.5, ..TaskSpec::tier(1) },
        TaskSpec { bad_target_fraction: 0.2, ..TaskSpec::tier(2) },
        TaskSpec { penalty: 1.0, ..TaskSpec::tier(3) },
        TaskSpec { action_count: 1, ..TaskSpec::tier(1) },
        TaskSpec { action_count: 19, ..TaskSpec::tier(1) },
    ];
    for spec in cases {
        assert!(matches!(EnvState::reset(&spec, 0), Err(EnvError::InvalidSpec(_))), "{spec:?}");
    }
}
