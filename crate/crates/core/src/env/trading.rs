//! Mean-reverting single-asset trading.
//!
//! The price follows an Ornstein-Uhlenbeck process sampled with its exact
//! transition; each step the agent buys (`a > 0`) or sells an amount of the
//! asset, paying a quadratic trading cost. At the last step the remaining
//! inventory is marked to market with a quadratic holding penalty.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ActionSpace, Environment, StepOutcome};
use crate::error::{Result, SrmError};
use crate::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TradingConfig {
    /// Long-run mean of the price.
    pub mean_level: f64,
    /// Reversion speed.
    pub reversion: f64,
    pub volatility: f64,
    pub trade_cost: f64,
    pub terminal_penalty: f64,
    pub max_trade: f64,
    pub max_inventory: f64,
    pub horizon: usize,
    pub dt: f64,
    /// Starting price; the long-run mean when unset.
    pub initial_price: Option<f64>,
}

impl Default for TradingConfig {
    fn default() -> Self {
        TradingConfig {
            mean_level: 1.0,
            reversion: 2.0,
            volatility: 1.0,
            trade_cost: 0.005,
            terminal_penalty: 0.5,
            max_trade: 1.0,
            max_inventory: 5.0,
            horizon: 50,
            dt: 0.02,
            initial_price: None,
        }
    }
}

impl TradingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.reversion > 0.0 && self.volatility >= 0.0) {
            return Err(SrmError::param("trading: dt and reversion must be > 0, volatility >= 0"));
        }
        if self.horizon == 0 || !(self.max_trade > 0.0) || !(self.max_inventory > 0.0) {
            return Err(SrmError::param("trading: horizon and bounds must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TradingEnv {
    cfg: TradingConfig,
    decay: f64,
    noise_scale: f64,
    price: f64,
    inventory: f64,
    t: usize,
}

impl TradingEnv {
    pub fn new(cfg: TradingConfig) -> Result<Self> {
        cfg.validate()?;
        let decay = (-cfg.reversion * cfg.dt).exp();
        let noise_scale =
            cfg.volatility * ((1.0 - decay * decay) / (2.0 * cfg.reversion)).sqrt();
        let price = cfg.initial_price.unwrap_or(cfg.mean_level);
        Ok(TradingEnv {
            cfg,
            decay,
            noise_scale,
            price,
            inventory: 0.0,
            t: 0,
        })
    }

    pub fn config(&self) -> &TradingConfig {
        &self.cfg
    }

    pub fn price(&self) -> f64 {
        self.price
    }

    pub fn inventory(&self) -> f64 {
        self.inventory
    }

    /// Exact OU transition over one `dt` given a standard normal draw.
    pub fn ou_step(&self, price: f64, noise: f64) -> f64 {
        let m = self.cfg.mean_level;
        m + (price - m) * self.decay + self.noise_scale * noise
    }

    /// Conditional variance of one OU transition.
    pub fn transition_variance(&self) -> f64 {
        self.noise_scale * self.noise_scale
    }

    /// `-a P - cost a^2`; when `terminal` carries `(q_T, P_T)` the
    /// liquidation value `q_T P_T - penalty q_T^2` is added.
    pub fn trading_reward(&self, price: f64, action: f64, terminal: Option<(f64, f64)>) -> f64 {
        let mut r = -action * price - self.cfg.trade_cost * action * action;
        if let Some((inventory, final_price)) = terminal {
            r += inventory * final_price - self.cfg.terminal_penalty * inventory * inventory;
        }
        r
    }

    fn observation(&self) -> Vec<f64> {
        vec![
            self.price,
            self.inventory / self.cfg.max_inventory,
            (self.cfg.horizon - self.t) as f64 / self.cfg.horizon as f64,
        ]
    }
}

impl Environment for TradingEnv {
    fn name(&self) -> &str {
        "trading"
    }

    fn obs_dim(&self) -> usize {
        3
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous {
            low: vec![-self.cfg.max_trade],
            high: vec![self.cfg.max_trade],
        }
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, _rng: &mut SimRng) -> Vec<f64> {
        self.price = self.cfg.initial_price.unwrap_or(self.cfg.mean_level);
        self.inventory = 0.0;
        self.t = 0;
        self.observation()
    }

    fn step(&mut self, action: &[f64], rng: &mut SimRng) -> StepOutcome {
        let requested = action
            .first()
            .copied()
            .unwrap_or(0.0)
            .clamp(-self.cfg.max_trade, self.cfg.max_trade);
        let bound = self.cfg.max_inventory;
        let inventory = (self.inventory + requested).clamp(-bound, bound);
        // trade actually executed after the inventory clip
        let traded = inventory - self.inventory;
        let noise: f64 = StandardNormal.sample(rng);
        let next_price = self.ou_step(self.price, noise);
        let done = self.t + 1 >= self.cfg.horizon;
        let reward = self.trading_reward(
            self.price,
            traded,
            done.then_some((inventory, next_price)),
        );
        self.price = next_price;
        self.inventory = inventory;
        self.t += 1;
        StepOutcome {
            obs: self.observation(),
            reward,
            done,
        }
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(TradingEnv::new(self.cfg.clone()).expect("validated config"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn env() -> TradingEnv {
        TradingEnv::new(TradingConfig::default()).unwrap()
    }

    #[test]
    fn ou_examples() {
        let e = env();
        assert_eq!(e.ou_step(1.0, 0.0), 1.0);
        let half = TradingEnv::new(TradingConfig {
            reversion: 2f64.ln() / 0.02,
            ..TradingConfig::default()
        })
        .unwrap();
        assert!((half.ou_step(2.0, 0.0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn reward_examples() {
        let e = env();
        assert_eq!(e.trading_reward(1.3, 0.0, None), 0.0);
        assert!((e.trading_reward(2.0, 1.0, None) + 2.005).abs() < 1e-12);
        assert!(e.trading_reward(1.0, 0.0, Some((2.0, 1.0))).abs() < 1e-12);
    }

    #[test]
    fn conditional_variance_by_monte_carlo() {
        let e = env();
        let mut rng = seeded_rng(5);
        let n = 1_000_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let p = e.ou_step(1.7, z);
            sum += p;
            sq += p * p;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let cfg = e.config();
        let expected = cfg.volatility.powi(2) * (1.0 - (-2.0 * cfg.reversion * cfg.dt).exp())
            / (2.0 * cfg.reversion);
        assert!((var / expected - 1.0).abs() < 0.01, "{var} vs {expected}");
    }

    #[test]
    fn stationary_moments() {
        let e = env();
        let mut rng = seeded_rng(9);
        // the chain is strongly autocorrelated (rho ~ 0.96), so a single
        // 1e6-step run only pins the variance to ~0.7%; use 1e7 steps
        let n = 10_000_000;
        let mut p = 1.0;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            p = e.ou_step(p, StandardNormal.sample(&mut rng));
            sum += p;
            sq += p * p;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        let cfg = e.config();
        let stationary = cfg.volatility.powi(2) / (2.0 * cfg.reversion);
        assert!((mean - cfg.mean_level).abs() < 0.01 * cfg.mean_level, "{mean}");
        assert!((var / stationary - 1.0).abs() < 0.01, "{var}");
    }

    #[test]
    fn idle_policy_earns_nothing() {
        let mut e = env();
        let mut rng = seeded_rng(2);
        e.reset(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let out = e.step(&[0.0], &mut rng);
            total += out.reward;
            steps += 1;
            if out.done {
                break;
            }
        }
        assert_eq!(total, 0.0);
        assert_eq!(steps, 50);
    }

    #[test]
    fn inventory_stays_bounded() {
        let mut e = env();
        let mut rng = seeded_rng(4);
        e.reset(&mut rng);
        for _ in 0..50 {
            e.step(&[3.0], &mut rng);
            assert!(e.inventory().abs() <= 5.0);
        }
        assert_eq!(e.inventory(), 5.0);
    }
}
