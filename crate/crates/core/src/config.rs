//! Experiment configuration: a JSON document plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::AgentConfig;
use crate::env::{PortfolioConfig, TradingConfig};
use crate::error::{Result, SrmError};
use crate::metrics::{default_curve_levels, ScoreReference};
use crate::spectrum::RiskSpectrum;
use crate::tabular::BilevelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    Trading(TradingConfig),
    Portfolio(PortfolioSetup),
    Tabular(TabularSetup),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Trading(TradingConfig::default())
    }
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Trading(_) => "trading",
            EnvConfig::Portfolio(_) => "portfolio",
            EnvConfig::Tabular(_) => "tabular",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortfolioSetup {
    /// CSV of daily log-returns (`date,asset1,...`).
    pub csv: PathBuf,
    /// Chronological share used for training; the rest is the test period.
    /// `1.0` trains and evaluates on the whole series.
    pub train_fraction: f64,
    pub window: usize,
    pub episode_len: usize,
    pub cost: f64,
}

impl Default for PortfolioSetup {
    fn default() -> Self {
        let p = PortfolioConfig::default();
        PortfolioSetup {
            csv: PathBuf::from("returns.csv"),
            train_fraction: 0.8,
            window: p.window,
            episode_len: p.episode_len,
            cost: p.cost,
        }
    }
}

impl PortfolioSetup {
    pub fn params(&self) -> PortfolioConfig {
        PortfolioConfig {
            window: self.window,
            episode_len: self.episode_len,
            cost: self.cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularSetup {
    /// Built-in fixture: `deterministic_chain`, `bandit` or `three_state`.
    pub fixture: Option<String>,
    /// JSON MDP file; used when no fixture is named.
    pub file: Option<PathBuf>,
    /// Solve exactly with the bi-level NPG scheme instead of training a
    /// neural agent on one-hot observations.
    pub exact: bool,
}

impl Default for TabularSetup {
    fn default() -> Self {
        TabularSetup {
            fixture: Some("bandit".into()),
            file: None,
            exact: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSource {
    /// Replay buffer of an online expert run (warm-up included).
    #[default]
    ExpertReplay,
    /// Rollouts of a trained expert with exploration noise.
    Expert,
    /// Uniformly random actions.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub source: DatasetSource,
    /// Records to store; for `expert-replay` also the expert's training length.
    pub steps: usize,
    /// Training steps of the expert for the `expert` source.
    pub expert_steps: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: PathBuf::from("dataset.csv"),
            source: DatasetSource::ExpertReplay,
            steps: 100_000,
            expert_steps: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvConfig,
    pub spectrum: RiskSpectrum,
    pub agent: AgentConfig,
    pub tabular: BilevelConfig,
    pub seeds: Vec<u64>,
    pub train_steps: usize,
    pub eval_episodes: usize,
    /// Base seed of the evaluation episodes (independent of training).
    pub eval_seed: u64,
    /// CVaR level reported next to the mean.
    pub cvar_alpha: f64,
    /// Score normalisation; trading falls back to its built-in reference.
    pub reference: Option<ScoreReference>,
    pub curve_levels: Vec<f64>,
    pub dataset: DatasetConfig,
    pub output_dir: PathBuf,
    /// Run seeds and evaluation episodes on the worker pool.
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "run".into(),
            env: EnvConfig::default(),
            spectrum: RiskSpectrum::neutral(),
            agent: AgentConfig::default(),
            tabular: BilevelConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            train_steps: 500_000,
            eval_episodes: 1000,
            eval_seed: 10_000,
            cvar_alpha: 0.2,
            reference: None,
            curve_levels: default_curve_levels(),
            dataset: DatasetConfig::default(),
            output_dir: PathBuf::from("runs"),
            parallel: true,
        }
    }
}

fn config_err(key: impl Into<String>, message: impl Into<String>) -> SrmError {
    SrmError::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        if self.eval_episodes == 0 {
            return Err(config_err("eval_episodes", "must be positive"));
        }
        if !(self.cvar_alpha > 0.0 && self.cvar_alpha <= 1.0) {
            return Err(config_err("cvar_alpha", format!("must lie in (0, 1], got {}", self.cvar_alpha)));
        }
        if let Some(bad) = self.curve_levels.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(config_err("curve_levels", format!("level {bad} outside (0, 1]")));
        }
        if let Some(r) = self.reference {
            if r.random == r.expert {
                return Err(config_err("reference", "random and expert references coincide"));
            }
        }
        match &self.env {
            EnvConfig::Trading(t) => t.validate().map_err(|e| config_err("env", e.to_string()))?,
            EnvConfig::Portfolio(p) => {
                if !(p.train_fraction > 0.0 && p.train_fraction <= 1.0) {
                    return Err(config_err("env.train_fraction", "must lie in (0, 1]"));
                }
            }
            EnvConfig::Tabular(t) => {
                if t.fixture.is_none() && t.file.is_none() {
                    return Err(config_err("env", "tabular env needs `fixture` or `file`"));
                }
            }
        }
        if self.tabular.quantiles == 0 {
            return Err(config_err("tabular.quantiles", "must be positive"));
        }
        Ok(())
    }

    /// The normalisation reference in effect.
    pub fn score_reference(&self) -> Option<ScoreReference> {
        match (&self.reference, &self.env) {
            (Some(r), _) => Some(*r),
            (None, EnvConfig::Trading(_)) => Some(crate::metrics::TRADING_REFERENCE),
            _ => None,
        }
    }

    /// Parses a JSON document and applies `key=value` overrides in order.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self> {
        let cfg: ExperimentConfig = if overrides.is_empty() {
            let mut de = serde_json::Deserializer::from_str(text);
            let cfg = serde_path_to_error::deserialize(&mut de).map_err(|e| {
                let inner = e.inner();
                config_err(
                    e.path().to_string(),
                    format!("{inner} (line {}, column {})", inner.line(), inner.column()),
                )
            })?;
            de.end().map_err(|e| config_err(".", e.to_string()))?;
            cfg
        } else {
            let mut value: Value = serde_json::from_str(text).map_err(|e| config_err(".", e.to_string()))?;
            for o in overrides {
                apply_override(&mut value, o)?;
            }
            from_value(value)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SrmError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text, overrides)
    }

    /// Defaults with overrides applied; used when no config file is given.
    pub fn from_overrides(overrides: &[String]) -> Result<Self> {
        Self::from_json_str("{}", overrides)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn from_value(value: Value) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| config_err(e.path().to_string(), e.inner().to_string()))
}

/// Sets the dotted `key` of a JSON tree to `value`. The value is read as
/// JSON when it parses and as a plain string otherwise; missing objects
/// along the path are created, array elements are addressed by index.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(assignment, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(config_err(assignment, "empty key"));
    }
    let parsed = serde_json::from_str::<Value>(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Object(map) => {
                let slot = map.entry(part.to_string()).or_insert(Value::Null);
                if last {
                    *slot = parsed;
                    return Ok(());
                }
                slot
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| config_err(key, format!("`{part}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| config_err(key, format!("index {idx} out of range (length {len})")))?;
                if last {
                    *slot = parsed;
                    return Ok(());
                }
                slot
            }
            _ => {
                return Err(config_err(key, format!("`{}` is a scalar", parts[..depth].join("."))));
            }
        };
    }
    unreachable!("the loop returns on the last path segment")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Algorithm;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_json_str("{}", &[]).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig {
            spectrum: "mc:0.1,0.4".parse().unwrap(),
            env: EnvConfig::Tabular(TabularSetup::default()),
            ..ExperimentConfig::default()
        };
        let text = cfg.to_json_string().unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&text, &[]).unwrap(), cfg);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let sets = [
            "agent.lr=0.001",
            "agent.algorithm=ac-srm",
            "spectrum=cvar:0.2",
            "seeds=[7,8]",
            "seeds.1=9",
            "env.volatility=0.5",
        ]
        .map(String::from);
        let cfg = ExperimentConfig::from_json_str(r#"{"env": {"kind": "trading"}}"#, &sets).unwrap();
        assert_eq!(cfg.agent.lr, 0.001);
        assert_eq!(cfg.agent.algorithm, Algorithm::AcSrm);
        assert_eq!(cfg.spectrum, RiskSpectrum::cvar(0.2).unwrap());
        assert_eq!(cfg.seeds, vec![7, 9]);
        match cfg.env {
            EnvConfig::Trading(t) => assert_eq!(t.volatility, 0.5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn switching_env_kind_by_override() {
        let sets = ["env.kind=tabular", "env.fixture=three_state"].map(String::from);
        let cfg = ExperimentConfig::from_overrides(&sets).unwrap();
        match cfg.env {
            EnvConfig::Tabular(t) => assert_eq!(t.fixture.as_deref(), Some("three_state")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_name_the_key_and_line() {
        let text = "{\n  \"agent\": {\n    \"lr\": \"fast\"\n  }\n}";
        match ExperimentConfig::from_json_str(text, &[]) {
            Err(SrmError::Config { key, message }) => {
                assert_eq!(key, "agent.lr");
                assert!(message.contains("line 3"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_json_str(r#"{"agnet": {}}"#, &[]) {
            Err(SrmError::Config { message, .. }) => assert!(message.contains("agnet")),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_overrides(&["agent.batch_size=0".into()]) {
            Err(SrmError::Config { key, .. }) => assert_eq!(key, "agent.batch_size"),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::from_overrides(&["spectrum=cvar:2".into()]).is_err());
        assert!(ExperimentConfig::from_overrides(&["lr".into()]).is_err());
        assert!(ExperimentConfig::from_overrides(&["seeds.5=1".into()]).is_err());
        assert!(ExperimentConfig::from_overrides(&["name.x=1".into()]).is_err());
    }
}
