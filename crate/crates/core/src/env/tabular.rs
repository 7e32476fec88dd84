use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ActionSpace, Environment, StepOutcome};
use crate::error::{Result, SrmError};
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardOutcome {
    pub value: f64,
    pub prob: f64,
}

/// Finite MDP with a finite reward support per `(state, action)` and a fixed
/// horizon. Reward and next state are drawn independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub horizon: usize,
    /// Initial state distribution.
    pub xi0: Vec<f64>,
    /// `transitions[x][a][y]` = P(y | x, a).
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// `rewards[x][a]` = reward support with probabilities.
    pub rewards: Vec<Vec<Vec<RewardOutcome>>>,
}

const PROB_TOL: f64 = 1e-9;

fn check_distribution(what: &str, probs: impl Iterator<Item = f64>) -> Result<()> {
    let mut total = 0.0;
    for p in probs {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(SrmError::input(format!("{what}: invalid probability {p}")));
        }
        total += p;
    }
    if (total - 1.0).abs() > PROB_TOL {
        return Err(SrmError::input(format!("{what}: probabilities sum to {total}")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(SrmError::input("tabular MDP needs at least one state and action"));
        }
        if self.horizon == 0 {
            return Err(SrmError::input("tabular MDP horizon must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(SrmError::param(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.xi0.len() != self.num_states {
            return Err(SrmError::shape(format!(
                "xi0 has {} entries for {} states",
                self.xi0.len(),
                self.num_states
            )));
        }
        check_distribution("xi0", self.xi0.iter().copied())?;
        if self.transitions.len() != self.num_states || self.rewards.len() != self.num_states {
            return Err(SrmError::shape("transitions/rewards must have one entry per state"));
        }
        for x in 0..self.num_states {
            if self.transitions[x].len() != self.num_actions
                || self.rewards[x].len() != self.num_actions
            {
                return Err(SrmError::shape(format!(
                    "state {x}: expected {} actions",
                    self.num_actions
                )));
            }
            for a in 0..self.num_actions {
                let row = &self.transitions[x][a];
                if row.len() != self.num_states {
                    return Err(SrmError::shape(format!(
                        "transitions[{x}][{a}] has {} entries",
                        row.len()
                    )));
                }
                check_distribution(&format!("transitions[{x}][{a}]"), row.iter().copied())?;
                let rewards = &self.rewards[x][a];
                if rewards.is_empty() {
                    return Err(SrmError::input(format!("rewards[{x}][{a}] is empty")));
                }
                if let Some(bad) = rewards.iter().find(|o| !o.value.is_finite()) {
                    return Err(SrmError::input(format!(
                        "rewards[{x}][{a}]: non-finite value {}",
                        bad.value
                    )));
                }
                check_distribution(&format!("rewards[{x}][{a}]"), rewards.iter().map(|o| o.prob))?;
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let mdp: TabularMdp = serde_json::from_str(text)?;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Smallest and largest reward in the support.
    pub fn reward_range(&self) -> (f64, f64) {
        self.rewards
            .iter()
            .flatten()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| {
                (lo.min(o.value), hi.max(o.value))
            })
    }

    /// One transition from `state` at time step `t`: returns
    /// `(reward, next_state, done)`, with `done` once the horizon is reached.
    pub fn tabular_step(
        &self,
        state: usize,
        action: usize,
        t: usize,
        rng: &mut SimRng,
    ) -> Result<(f64, usize, bool)> {
        if state >= self.num_states || action >= self.num_actions {
            return Err(SrmError::input(format!(
                "state {state} / action {action} out of range ({} states, {} actions)",
                self.num_states, self.num_actions
            )));
        }
        let reward_idx = sample_index(rng, self.rewards[state][action].iter().map(|o| o.prob));
        let reward = self.rewards[state][action][reward_idx].value;
        let next = sample_index(rng, self.transitions[state][action].iter().copied());
        Ok((reward, next, t + 1 >= self.horizon))
    }

    pub fn sample_initial(&self, rng: &mut SimRng) -> usize {
        sample_index(rng, self.xi0.iter().copied())
    }

    pub fn one_hot(&self, state: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_states];
        v[state] = 1.0;
        v
    }
}

pub(crate) fn sample_index(rng: &mut SimRng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        cum += p;
        if p > 0.0 {
            last = i;
        }
        if u < cum {
            return i;
        }
    }
    last
}

/// A tabular MDP as an episodic environment with one-hot observations.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: TabularMdp,
    name: String,
    state: usize,
    t: usize,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp, name: impl Into<String>) -> Result<Self> {
        mdp.validate()?;
        Ok(TabularEnv {
            mdp,
            name: name.into(),
            state: 0,
            t: 0,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }
}

impl Environment for TabularEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn obs_dim(&self) -> usize {
        self.mdp.num_states
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.mdp.num_actions)
    }

    fn horizon(&self) -> usize {
        self.mdp.horizon
    }

    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        self.state = self.mdp.sample_initial(rng);
        self.t = 0;
        self.mdp.one_hot(self.state)
    }

    fn step(&mut self, action: &[f64], rng: &mut SimRng) -> StepOutcome {
        let a = action
            .first()
            .map(|a| a.round().clamp(0.0, (self.mdp.num_actions - 1) as f64) as usize)
            .unwrap_or(0);
        let (reward, next, done) = self
            .mdp
            .tabular_step(self.state, a, self.t, rng)
            .expect("state and clamped action are in range");
        self.state = next;
        self.t += 1;
        StepOutcome {
            obs: self.mdp.one_hot(next),
            reward,
            done,
        }
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(TabularEnv {
            mdp: self.mdp.clone(),
            name: self.name.clone(),
            state: 0,
            t: 0,
        })
    }
}
