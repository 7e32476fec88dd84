//! Small tabular MDPs whose return laws can be enumerated by hand.

use super::tabular::{RewardOutcome, TabularMdp};

fn r(value: f64, prob: f64) -> RewardOutcome {
    RewardOutcome { value, prob }
}

/// One state, one action, reward 1, `gamma = 0.5`, horizon 2: `G = 1.5`.
pub fn deterministic_chain() -> TabularMdp {
    TabularMdp {
        num_states: 1,
        num_actions: 1,
        gamma: 0.5,
        horizon: 2,
        xi0: vec![1.0],
        transitions: vec![vec![vec![1.0]]],
        rewards: vec![vec![vec![r(1.0, 1.0)]]],
    }
}

/// Two-armed bandit: arm 0 pays 0 or 2 with equal odds, arm 1 pays 0.9.
/// The risky arm has the higher mean, the safe arm the higher CVaR(0.5).
pub fn bandit() -> TabularMdp {
    TabularMdp {
        num_states: 1,
        num_actions: 2,
        gamma: 0.9,
        horizon: 1,
        xi0: vec![1.0],
        transitions: vec![vec![vec![1.0], vec![1.0]]],
        rewards: vec![vec![vec![r(0.0, 0.5), r(2.0, 0.5)], vec![r(0.9, 1.0)]]],
    }
}

/// Three states, two actions, horizon 2. Five reachable extended decision
/// states, so 32 deterministic extended-state policies.
pub fn three_state() -> TabularMdp {
    TabularMdp {
        num_states: 3,
        num_actions: 2,
        gamma: 0.9,
        horizon: 2,
        xi0: vec![1.0, 0.0, 0.0],
        transitions: vec![
            vec![vec![0.0, 0.5, 0.5], vec![0.0, 1.0, 0.0]],
            vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
            vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
        ],
        rewards: vec![
            vec![vec![r(0.0, 1.0)], vec![r(0.5, 0.6), r(0.2, 0.4)]],
            vec![vec![r(-1.0, 0.3), r(2.0, 0.7)], vec![r(1.0, 1.0)]],
            vec![vec![r(0.0, 0.5), r(3.0, 0.5)], vec![r(0.8, 1.0)]],
        ],
    }
}

/// All fixtures with their names.
pub fn all() -> Vec<(&'static str, TabularMdp)> {
    vec![
        ("bandit", bandit()),
        ("chain", deterministic_chain()),
        ("three-state", three_state()),
    ]
}

pub fn by_name(name: &str) -> Option<TabularMdp> {
    all().into_iter().find(|(n, _)| *n == name).map(|(_, m)| m)
}
