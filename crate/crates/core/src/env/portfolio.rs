//! Long-only portfolio allocation over a CSV series of daily log-returns.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ActionSpace, Environment, StepOutcome};
use crate::error::{Result, SrmError};
use crate::SimRng;

/// Daily log-returns, one row per date and one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    pub assets: Vec<String>,
    pub dates: Vec<String>,
    pub returns: Vec<Vec<f64>>,
}

impl ReturnSeries {
    /// Parses `date,asset1,asset2,...` followed by one row per day.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| SrmError::Dataset("return series: empty CSV".into()))?;
        let mut cols = header.split(',').map(|c| c.trim().to_string());
        let first = cols.next().unwrap_or_default();
        if !first.eq_ignore_ascii_case("date") {
            return Err(SrmError::Dataset(format!(
                "return series: first header column must be `date`, found `{first}`"
            )));
        }
        let assets: Vec<String> = cols.collect();
        if assets.is_empty() {
            return Err(SrmError::Dataset("return series: no asset columns".into()));
        }
        let mut dates = Vec::new();
        let mut returns = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let mut fields = line.split(',');
            let date = fields.next().unwrap_or_default().trim().to_string();
            let row = fields
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|_| {
                        SrmError::Dataset(format!(
                            "return series line {}: cannot parse `{}`",
                            lineno + 2,
                            f.trim()
                        ))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != assets.len() {
                return Err(SrmError::Dataset(format!(
                    "return series line {}: expected {} values, found {}",
                    lineno + 2,
                    assets.len(),
                    row.len()
                )));
            }
            dates.push(date);
            returns.push(row);
        }
        Ok(ReturnSeries {
            assets,
            dates,
            returns,
        })
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("date");
        for a in &self.assets {
            out.push(',');
            out.push_str(a);
        }
        out.push('\n');
        for (d, row) in self.dates.iter().zip(&self.returns) {
            out.push_str(d);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn num_assets(&self) -> usize {
        self.assets.len()
    }

    /// Chronological split: the first `fraction` of days, then the rest.
    pub fn split(&self, fraction: f64) -> (ReturnSeries, ReturnSeries) {
        let cut = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        let part = |range: std::ops::Range<usize>| ReturnSeries {
            assets: self.assets.clone(),
            dates: self.dates[range.clone()].to_vec(),
            returns: self.returns[range].to_vec(),
        };
        (part(0..cut), part(cut..self.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PortfolioConfig {
    /// Number of past log-returns per asset in the observation.
    pub window: usize,
    pub episode_len: usize,
    /// Proportional cost per unit of turnover.
    pub cost: f64,
}

impl Default for PortfolioConfig {
    fn default() -> Self {
        PortfolioConfig {
            window: 5,
            episode_len: 63,
            cost: 0.0025,
        }
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = v.iter().map(|x| if x.is_finite() { *x } else { 0.0 }).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cum += u;
        let t = (cum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter()
        .map(|x| if x.is_finite() { (x - theta).max(0.0) } else { 0.0 })
        .collect()
}

/// Reward of holding `new_weights` through one day of `log_returns` after
/// rebalancing from `current_weights`: log growth minus `cost * turnover`.
/// Also returns the drifted weights at the end of the day.
pub fn portfolio_step(
    log_returns: &[f64],
    current_weights: &[f64],
    new_weights: &[f64],
    cost: f64,
) -> (f64, Vec<f64>) {
    let turnover: f64 = new_weights
        .iter()
        .zip(current_weights)
        .map(|(n, c)| (n - c).abs())
        .sum();
    let grown: Vec<f64> = new_weights
        .iter()
        .zip(log_returns)
        .map(|(w, r)| w * r.exp())
        .collect();
    let growth: f64 = grown.iter().sum();
    let drifted = grown.iter().map(|g| g / growth).collect();
    (growth.ln() - cost * turnover, drifted)
}

#[derive(Debug, Clone)]
pub struct PortfolioEnv {
    series: ReturnSeries,
    cfg: PortfolioConfig,
    name: String,
    /// Index of the day whose return the next action earns.
    cursor: usize,
    t: usize,
    weights: Vec<f64>,
}

impl PortfolioEnv {
    pub fn new(series: ReturnSeries, cfg: PortfolioConfig) -> Result<Self> {
        let needed = cfg.window + cfg.episode_len;
        if series.len() < needed {
            return Err(SrmError::Dataset(format!(
                "portfolio: series has {} days, needs at least {needed} (window {} + episode {})",
                series.len(),
                cfg.window,
                cfg.episode_len
            )));
        }
        if cfg.window == 0 || cfg.episode_len == 0 {
            return Err(SrmError::param("portfolio: window and episode length must be positive"));
        }
        let k = series.num_assets();
        Ok(PortfolioEnv {
            name: "portfolio".into(),
            weights: initial_weights(k),
            series,
            cfg,
            cursor: 0,
            t: 0,
        })
    }

    pub fn series(&self) -> &ReturnSeries {
        &self.series
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Starts an episode at a given cursor (`window..=len - episode_len`).
    pub fn reset_at(&mut self, start: usize) -> Vec<f64> {
        let lo = self.cfg.window;
        let hi = self.series.len() - self.cfg.episode_len;
        self.cursor = start.clamp(lo, hi);
        self.t = 0;
        self.weights = initial_weights(self.series.num_assets());
        self.observation()
    }

    fn observation(&self) -> Vec<f64> {
        let k = self.series.num_assets();
        let mut obs = Vec::with_capacity(self.cfg.window * k + k);
        for day in self.cursor - self.cfg.window..self.cursor {
            obs.extend_from_slice(&self.series.returns[day]);
        }
        obs.extend_from_slice(&self.weights);
        obs
    }
}

/// Episodes start fully in the last asset (cash, by convention).
fn initial_weights(k: usize) -> Vec<f64> {
    let mut w = vec![0.0; k];
    w[k - 1] = 1.0;
    w
}

impl Environment for PortfolioEnv {
    fn name(&self) -> &str {
        &self.name
    }

    fn obs_dim(&self) -> usize {
        self.series.num_assets() * (self.cfg.window + 1)
    }

    fn action_space(&self) -> ActionSpace {
        let k = self.series.num_assets();
        ActionSpace::Continuous {
            low: vec![0.0; k],
            high: vec![1.0; k],
        }
    }

    fn horizon(&self) -> usize {
        self.cfg.episode_len
    }

    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64> {
        let lo = self.cfg.window;
        let hi = self.series.len() - self.cfg.episode_len;
        let start = rng.random_range(lo..=hi);
        self.reset_at(start)
    }

    fn step(&mut self, action: &[f64], _rng: &mut SimRng) -> StepOutcome {
        let target = project_to_simplex(action);
        let (reward, drifted) = portfolio_step(
            &self.series.returns[self.cursor],
            &self.weights,
            &target,
            self.cfg.cost,
        );
        self.weights = drifted;
        self.cursor += 1;
        self.t += 1;
        StepOutcome {
            obs: self.observation(),
            reward,
            done: self.t >= self.cfg.episode_len,
        }
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(
            PortfolioEnv::new(self.series.clone(), self.cfg.clone()).expect("validated series"),
        )
    }
}
