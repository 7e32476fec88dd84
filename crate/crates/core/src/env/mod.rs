//! Environments and the extended-state wrapper.
//!
//! Every environment works on plain observation vectors; agents see the
//! extended state `(observation, s, c)` built by [`ExtendedState`].

mod extended;
pub mod fixtures;
mod portfolio;
mod tabular;
mod trading;

pub use extended::{extend_step, ExtendedState};
pub use portfolio::{
    portfolio_step, project_to_simplex, PortfolioConfig, PortfolioEnv, ReturnSeries,
};
pub use tabular::{RewardOutcome, TabularEnv, TabularMdp};
pub use trading::{TradingConfig, TradingEnv};

use serde::{Deserialize, Serialize};

use crate::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    /// `n` actions, encoded as a one-element vector holding the index.
    Discrete(usize),
    /// Box-bounded continuous actions.
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Length of the action vector stored in transitions.
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous { low, .. } => low.len(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }

    /// Clips a continuous action into the box; discrete indices are clamped.
    pub fn clip(&self, action: &mut [f64]) {
        match self {
            ActionSpace::Discrete(n) => {
                if let Some(a) = action.first_mut() {
                    *a = a.round().clamp(0.0, (*n - 1) as f64);
                }
            }
            ActionSpace::Continuous { low, high } => {
                for ((a, lo), hi) in action.iter_mut().zip(low).zip(high) {
                    *a = a.clamp(*lo, *hi);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A finite-horizon episodic environment. One instance per worker.
pub trait Environment: Send + Sync {
    fn name(&self) -> &str;
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    /// Maximum episode length; episodes end no later than this.
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64>;
    fn step(&mut self, action: &[f64], rng: &mut SimRng) -> StepOutcome;
    /// Fresh, independent copy in its initial configuration.
    fn boxed_clone(&self) -> Box<dyn Environment>;
}
