//! Cross-module episode invariants, checked with brute-force oracles over
//! random-action episodes: reward accounting, collision freedom, bounds,
//! determinism, monotone time, and termination.

use rearrange_core::gridworld::{
    is_success, legal_actions, random_scenario, step, Scenario, WorldState, DEFAULT_T_MAX,
    REWARD_ARRIVAL, REWARD_LEAVE, REWARD_MOVE, REWARD_SUCCESS,
};
use rearrange_core::pathfind::PrimitiveAction;
use rearrange_core::rng::{derive_stream, Rng};

/// Independent occupancy check: every object footprint in bounds and no two
/// footprints overlapping.
fn assert_no_overlap(scenario: &Scenario, state: &WorldState) {
    let m = scenario.m as i32;
    let mut seen = vec![false; (m * m) as usize];
    for i in 0..scenario.n_objects() {
        let p = state.poses[i];
        let (w, h) = scenario.objects[i].extent(p.phi);
        assert!(p.x >= 0 && p.y >= 0 && p.x + (w as i32) <= m && p.y + (h as i32) <= m);
        for dy in 0..h as i32 {
            for dx in 0..w as i32 {
                let idx = ((p.y + dy) * m + p.x + dx) as usize;
                assert!(!seen[idx], "objects overlap at cell ({}, {})", p.x + dx, p.y + dy);
                seen[idx] = true;
            }
        }
    }
    for r in &scenario.immovable {
        for dy in 0..r.h as i32 {
            for dx in 0..r.w as i32 {
                let idx = ((r.y + dy) * m + r.x + dx) as usize;
                assert!(!seen[idx], "object overlaps an immovable");
            }
        }
    }
}

struct EpisodeLog {
    actions: Vec<PrimitiveAction>,
    rewards: Vec<f64>,
    arrivals: u32,
    leaves: u32,
    success: bool,
    final_state: WorldState,
}

fn run_random_episode(scenario: &Scenario, seed: u64) -> EpisodeLog {
    let mut rng = Rng::new(seed);
    let mut state = WorldState::initial(scenario);
    let mut log = EpisodeLog {
        actions: Vec::new(),
        rewards: Vec::new(),
        arrivals: 0,
        leaves: 0,
        success: is_success(&state),
        final_state: state.clone(),
    };
    while !state.is_done() {
        let legal = legal_actions(scenario, &state);
        if legal.is_empty() {
            break;
        }
        let action = legal[rng.next_below(legal.len())];
        let before = state.at_target[action.object];
        let t_before = state.t;
        let (next, out) = step(scenario, &state, action).expect("picked legal action");
        assert_eq!(next.t, t_before + 1, "t increases by exactly one");
        assert_no_overlap(scenario, &next);
        let after = next.at_target[action.object];
        if !before && after {
            log.arrivals += 1;
        }
        if before && !after {
            log.leaves += 1;
        }
        log.actions.push(action);
        log.rewards.push(out.reward);
        log.success = out.success;
        state = next;
        if out.done {
            break;
        }
    }
    log.final_state = state;
    log
}

#[test]
fn random_episodes_satisfy_reward_accounting_and_safety() {
    for trial in 0..400u64 {
        let n = 1 + (trial % 4) as usize;
        let m = 5 + (trial % 5) as usize;
        let scenario = random_scenario(n, m, derive_stream(0xED, trial)).unwrap();
        let log = run_random_episode(&scenario, derive_stream(0xAC, trial));

        // Reward accounting identity: the sum decomposes into move, arrival,
        // leave, and success contributions counted by replaying transitions.
        let total: f64 = log.rewards.iter().sum();
        let expect = REWARD_MOVE * log.rewards.len() as f64
            + REWARD_ARRIVAL * log.arrivals as f64
            + REWARD_LEAVE * log.leaves as f64
            + if log.success { REWARD_SUCCESS } else { 0.0 };
        assert_eq!(total, expect, "trial {trial}");

        // Termination within the step limit.
        assert!(log.final_state.t <= DEFAULT_T_MAX);
        assert!(log.rewards.len() <= DEFAULT_T_MAX as usize);
        if log.success {
            assert!(is_success(&log.final_state));
        }
    }
}

#[test]
fn identical_action_sequences_replay_identically() {
    for trial in 0..100u64 {
        let scenario = random_scenario(3, 8, derive_stream(0x11, trial)).unwrap();
        let log = run_random_episode(&scenario, derive_stream(0x22, trial));

        let mut state = WorldState::initial(&scenario);
        let mut rewards = Vec::new();
        for &action in &log.actions {
            let (next, out) = step(&scenario, &state, action).unwrap();
            rewards.push(out.reward);
            state = next;
        }
        assert_eq!(rewards, log.rewards);
        assert_eq!(state, log.final_state);
    }
}

#[test]
fn success_flag_matches_exact_pose_equality() {
    for trial in 0..50u64 {
        let scenario = random_scenario(2, 6, derive_stream(0x33, trial)).unwrap();
        let log = run_random_episode(&scenario, derive_stream(0x44, trial));
        let state = &log.final_state;
        let exact = (0..scenario.n_objects())
            .all(|i| state.poses[i] == scenario.target[i]);
        assert_eq!(is_success(state), exact);
        for i in 0..scenario.n_objects() {
            assert_eq!(state.at_target[i], state.poses[i] == scenario.target[i]);
        }
    }
}
