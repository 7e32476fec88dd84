//! Experiment orchestration: environments from a config, training across
//! seeds, evaluation, dataset generation and the files written to disk.
//!
//! Each seed trains its own agent on its own environment copy; aggregates
//! are computed after all seeds finish, in seed order, so reports do not
//! depend on the execution mode.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{evaluate_policy, train_offline, train_online, Agent, Algorithm, Checkpoint, TrainLog};
use crate::config::{DatasetSource, EnvConfig, ExperimentConfig};
use crate::data::TransitionDataset;
use crate::env::{fixtures, ActionSpace, Environment, PortfolioEnv, ReturnSeries, TabularEnv, TabularMdp, TradingEnv};
use crate::error::{Result, SrmError};
use crate::exec::{map_indexed, Execution};
use crate::metrics::{risk_curve, risk_curve_csv, CurvePoint, EvalReport};
use crate::tabular::{self, ExtendedMdp};
use crate::{derive_seed, seeded_rng, SimRng};

pub const METRICS_FILE: &str = "metrics.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "risk_curve.csv";

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("checkpoint-seed{seed}.json"))
}

/// Training and evaluation environments. They differ only for portfolio
/// runs with a chronological train/test split.
pub fn build_envs(cfg: &ExperimentConfig) -> Result<(Box<dyn Environment>, Box<dyn Environment>)> {
    match &cfg.env {
        EnvConfig::Trading(t) => {
            let env = TradingEnv::new(t.clone())?;
            Ok((Box::new(env.clone()), Box::new(env)))
        }
        EnvConfig::Portfolio(p) => {
            let series = ReturnSeries::load_csv(&p.csv)?;
            if p.train_fraction < 1.0 {
                let (train, test) = series.split(p.train_fraction);
                Ok((
                    Box::new(PortfolioEnv::new(train, p.params())?),
                    Box::new(PortfolioEnv::new(test, p.params())?),
                ))
            } else {
                let env = PortfolioEnv::new(series, p.params())?;
                Ok((Box::new(env.clone()), Box::new(env)))
            }
        }
        EnvConfig::Tabular(_) => {
            let (name, mdp) = tabular_mdp(cfg)?;
            let env = TabularEnv::new(mdp, name)?;
            Ok((Box::new(env.clone()), Box::new(env)))
        }
    }
}

fn tabular_mdp(cfg: &ExperimentConfig) -> Result<(String, TabularMdp)> {
    let EnvConfig::Tabular(t) = &cfg.env else {
        return Err(SrmError::input("not a tabular environment"));
    };
    match (&t.fixture, &t.file) {
        (Some(name), _) => fixtures::by_name(name)
            .map(|m| (name.clone(), m))
            .ok_or_else(|| SrmError::Config {
                key: "env.fixture".into(),
                message: format!("unknown fixture `{name}`"),
            }),
        (None, Some(path)) => Ok((path.display().to_string(), TabularMdp::load(path)?)),
        (None, None) => Err(SrmError::input("tabular env needs a fixture or a file")),
    }
}

fn execution(cfg: &ExperimentConfig) -> Execution {
    if cfg.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

/// Exact quantities of a tabular bi-level run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSummary {
    pub mdp: String,
    pub objective_history: Vec<f64>,
    pub srm_history: Vec<f64>,
    pub final_mean: f64,
    /// Probability of each action at the initial states.
    pub initial_action_probs: Vec<f64>,
    /// Atoms `(return, probability)` of the final return law.
    pub final_law: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub report: EvalReport,
    pub curve: Vec<CurvePoint>,
    #[serde(default)]
    pub train_logs: Vec<TrainSummary>,
    #[serde(default)]
    pub tabular: Option<TabularSummary>,
}

/// Per-seed training digest kept in the report (full logs stay in memory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub env_steps: usize,
    pub updates: u64,
    pub h_refreshes: usize,
    pub episodes: usize,
    pub final_critic_loss: Option<f64>,
}

impl TrainSummary {
    fn new(seed: u64, log: &TrainLog) -> Self {
        TrainSummary {
            seed,
            env_steps: log.env_steps,
            updates: log.updates,
            h_refreshes: log.h_refreshes,
            episodes: log.episode_returns.len(),
            final_critic_loss: log.critic_losses.last().copied(),
        }
    }
}

impl RunReport {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// The metrics CSV; tabular runs append their exact quantities.
    pub fn metrics_csv(&self) -> String {
        let mut out = self.report.to_metrics_csv();
        if let Some(t) = &self.tabular {
            if let (Some(obj), Some(srm)) = (t.objective_history.last(), t.srm_history.last()) {
                out.push_str(&format!("objective,exact,{obj}\n"));
                out.push_str(&format!("srm,exact,{srm}\n"));
            }
            out.push_str(&format!("mean,exact,{}\n", t.final_mean));
        }
        out
    }
}

/// A finished run with the paths it wrote.
#[derive(Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub logs: Vec<TrainLog>,
    pub files: Vec<PathBuf>,
}

fn write_outputs(cfg: &ExperimentConfig, report: &RunReport, mut files: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    let metrics = dir.join(METRICS_FILE);
    std::fs::write(&metrics, report.metrics_csv())?;
    let curve = dir.join(CURVE_FILE);
    std::fs::write(&curve, risk_curve_csv(&report.curve))?;
    let json = dir.join(REPORT_FILE);
    std::fs::write(&json, serde_json::to_string_pretty(report)?)?;
    files.extend([metrics, curve, json]);
    Ok(files)
}

fn finish_report(
    cfg: &ExperimentConfig,
    returns: Vec<Vec<f64>>,
    daily: Option<Vec<f64>>,
    train_logs: Vec<TrainSummary>,
    tabular: Option<TabularSummary>,
) -> Result<RunReport> {
    let reference = cfg.score_reference();
    let curve = risk_curve(&returns, &cfg.curve_levels, reference)?;
    let mut report = EvalReport::from_returns(cfg.seeds.clone(), returns, cfg.cvar_alpha, reference)?;
    if let Some(d) = daily {
        report = report.with_daily_returns(d)?;
    }
    Ok(RunReport {
        config: cfg.clone(),
        report,
        curve,
        train_logs,
        tabular,
    })
}

struct SeedRun {
    returns: Vec<f64>,
    rewards: Vec<f64>,
    log: TrainLog,
}

fn evaluate_seed(cfg: &ExperimentConfig, agent: &Agent, env: &dyn Environment, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let episodes = evaluate_policy(agent, env, cfg.eval_episodes, derive_seed(cfg.eval_seed, seed), execution(cfg))?;
    let returns = episodes.iter().map(|e| e.total).collect();
    let rewards = episodes.into_iter().flat_map(|e| e.rewards).collect();
    Ok((returns, rewards))
}

fn collect(cfg: &ExperimentConfig, runs: Vec<SeedRun>, files: Vec<PathBuf>) -> Result<RunOutcome> {
    let portfolio = matches!(cfg.env, EnvConfig::Portfolio(_));
    let mut returns = Vec::with_capacity(runs.len());
    let mut daily = Vec::new();
    let mut logs = Vec::with_capacity(runs.len());
    let mut summaries = Vec::with_capacity(runs.len());
    for (seed, run) in cfg.seeds.iter().zip(runs) {
        returns.push(run.returns);
        if portfolio {
            daily.extend(run.rewards);
        }
        summaries.push(TrainSummary::new(*seed, &run.log));
        logs.push(run.log);
    }
    let report = finish_report(cfg, returns, portfolio.then_some(daily), summaries, None)?;
    let files = write_outputs(cfg, &report, files)?;
    Ok(RunOutcome { report, logs, files })
}

fn new_agent(cfg: &ExperimentConfig, env: &dyn Environment, seed: u64) -> Result<Agent> {
    Agent::new(cfg.agent.clone(), cfg.spectrum, env.obs_dim(), env.action_space(), seed)
}

/// Trains per the config and evaluates; tabular configs with `exact` set
/// run the bi-level solver instead.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    if let EnvConfig::Tabular(t) = &cfg.env {
        if t.exact {
            return run_tabular(cfg);
        }
    }
    if cfg.agent.algorithm.is_offline() {
        run_offline(cfg)
    } else {
        run_online(cfg)
    }
}

pub fn run_online(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let (train_env, eval_env) = build_envs(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let results = map_indexed(execution(cfg), cfg.seeds.len(), |k| -> Result<(SeedRun, PathBuf)> {
        let seed = cfg.seeds[k];
        let mut env = train_env.boxed_clone();
        let mut agent = new_agent(cfg, env.as_ref(), seed)?;
        let (log, _) = train_online(&mut agent, env.as_mut(), cfg.train_steps, seed)?;
        let path = checkpoint_path(&cfg.output_dir, seed);
        agent.checkpoint().save(&path)?;
        let (returns, rewards) = evaluate_seed(cfg, &agent, eval_env.as_ref(), seed)?;
        Ok((SeedRun { returns, rewards, log }, path))
    });
    let (runs, files): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    collect(cfg, runs, files)
}

pub fn run_offline(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let dataset = TransitionDataset::load(&cfg.dataset.path)?;
    let (_, eval_env) = build_envs(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let results = map_indexed(execution(cfg), cfg.seeds.len(), |k| -> Result<(SeedRun, PathBuf)> {
        let seed = cfg.seeds[k];
        let mut agent = new_agent(cfg, eval_env.as_ref(), seed)?;
        let log = train_offline(&mut agent, &dataset, cfg.train_steps, seed)?;
        let path = checkpoint_path(&cfg.output_dir, seed);
        agent.checkpoint().save(&path)?;
        let (returns, rewards) = evaluate_seed(cfg, &agent, eval_env.as_ref(), seed)?;
        Ok((SeedRun { returns, rewards, log }, path))
    });
    let (runs, files): (Vec<_>, Vec<_>) = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    collect(cfg, runs, files)
}

/// Exact bi-level solve. Evaluation returns are drawn from the exact
/// return law of the final policy (discounted returns).
pub fn run_tabular(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let (name, mdp) = tabular_mdp(cfg)?;
    let ext = ExtendedMdp::new(mdp)?;
    let result = tabular::bilevel_train(&ext, &cfg.spectrum, &cfg.tabular)?;
    let law = result.final_law.initial.clone();
    let returns: Vec<Vec<f64>> = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let mut rng = seeded_rng(derive_seed(cfg.eval_seed, seed));
            (0..cfg.eval_episodes).map(|_| sample_law(&law, &mut rng)).collect()
        })
        .collect();
    let summary = TabularSummary {
        mdp: name,
        objective_history: result.objective_history.clone(),
        srm_history: result.srm_history.clone(),
        final_mean: tabular::law_mean(&law),
        initial_action_probs: (0..ext.num_actions())
            .map(|a| tabular::initial_action_prob(&ext, &result.policy, a))
            .collect(),
        final_law: law,
    };
    let report = finish_report(cfg, returns, None, Vec::new(), Some(summary))?;
    let files = write_outputs(cfg, &report, Vec::new())?;
    Ok(RunOutcome {
        report,
        logs: Vec::new(),
        files,
    })
}

fn sample_law(law: &[(f64, f64)], rng: &mut SimRng) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(z, p) in law {
        acc += p;
        if u < acc {
            return z;
        }
    }
    law.last().map_or(0.0, |&(z, _)| z)
}

/// Evaluates saved checkpoints (one per configured seed) without training.
pub fn evaluate_checkpoints(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let (_, eval_env) = build_envs(cfg)?;
    let results = map_indexed(execution(cfg), cfg.seeds.len(), |k| -> Result<SeedRun> {
        let seed = cfg.seeds[k];
        let cp = Checkpoint::load(checkpoint_path(dir, seed))?;
        if cp.obs_dim != eval_env.obs_dim() || cp.action_space != eval_env.action_space() {
            return Err(SrmError::input(format!(
                "checkpoint for seed {seed} does not match the {} environment",
                eval_env.name()
            )));
        }
        let agent = Agent::from_checkpoint(&cp, seed)?;
        let (returns, rewards) = evaluate_seed(cfg, &agent, eval_env.as_ref(), seed)?;
        Ok(SeedRun {
            returns,
            rewards,
            log: TrainLog::default(),
        })
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    collect(cfg, runs, Vec::new())
}

/// CVaR-versus-level curve of saved checkpoints; writes only the curve file
/// and returns its points.
pub fn risk_curve_from_checkpoints(cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<CurvePoint>, PathBuf)> {
    let mut eval_cfg = cfg.clone();
    eval_cfg.output_dir = std::env::temp_dir().join(format!("srm-curve-{}", std::process::id()));
    let outcome = evaluate_checkpoints(&eval_cfg, dir);
    let _ = std::fs::remove_dir_all(&eval_cfg.output_dir);
    let outcome = outcome?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join(CURVE_FILE);
    std::fs::write(&path, risk_curve_csv(&outcome.report.curve))?;
    Ok((outcome.report.curve, path))
}

fn random_action(space: &ActionSpace, rng: &mut SimRng) -> Vec<f64> {
    match space {
        ActionSpace::Discrete(n) => vec![rng.random_range(0..*n) as f64],
        ActionSpace::Continuous { low, high } => low.iter().zip(high).map(|(l, h)| rng.random_range(*l..=*h)).collect(),
    }
}

/// Online algorithm used to train the data-collecting expert.
fn expert_config(cfg: &ExperimentConfig) -> crate::agent::AgentConfig {
    let mut agent = cfg.agent.clone();
    if agent.algorithm.is_offline() {
        agent.algorithm = Algorithm::Td3Srm;
    }
    agent
}

/// Builds the offline dataset described by `cfg.dataset` and saves it.
pub fn generate(cfg: &ExperimentConfig) -> Result<(TransitionDataset, PathBuf)> {
    cfg.validate()?;
    let d = &cfg.dataset;
    let (mut env, _) = build_envs(cfg)?;
    let gamma = cfg.agent.gamma;
    let space = env.action_space();
    let dataset = match d.source {
        DatasetSource::Random => {
            generate_with(env.as_mut(), gamma, |_, rng| random_action(&space, rng), "random", d)?
        }
        DatasetSource::ExpertReplay => {
            let mut agent_cfg = expert_config(cfg);
            agent_cfg.replay_capacity = agent_cfg.replay_capacity.max(d.steps);
            let mut agent = Agent::new(agent_cfg, cfg.spectrum, env.obs_dim(), space.clone(), d.seed)?;
            let (_, buffer) = train_online(&mut agent, env.as_mut(), d.steps, d.seed)?;
            let tag = format!("expert-replay:{}:{}", algorithm_name(agent.config().algorithm), cfg.spectrum);
            let mut ds = TransitionDataset::empty(env.name(), gamma, env.obs_dim(), space.dim(), &tag, d.seed);
            for r in buffer.ordered() {
                ds.push(r);
            }
            ds
        }
        DatasetSource::Expert => {
            let mut agent = Agent::new(expert_config(cfg), cfg.spectrum, env.obs_dim(), space.clone(), d.seed)?;
            train_online(&mut agent, env.as_mut(), d.expert_steps, d.seed)?;
            let tag = format!("expert:{}:{}", algorithm_name(agent.config().algorithm), cfg.spectrum);
            let mut fresh = env.boxed_clone();
            generate_with(
                fresh.as_mut(),
                gamma,
                |features, rng| agent.act(features, true, rng).unwrap_or_else(|_| random_action(&space, rng)),
                &tag,
                d,
            )?
        }
    };
    dataset.validate()?;
    if let Some(parent) = d.path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    dataset.save(&d.path)?;
    Ok((dataset, d.path.clone()))
}

fn generate_with<P>(
    env: &mut dyn Environment,
    gamma: f64,
    policy: P,
    tag: &str,
    d: &crate::config::DatasetConfig,
) -> Result<TransitionDataset>
where
    P: FnMut(&[f64], &mut SimRng) -> Vec<f64>,
{
    crate::data::generate_dataset(env, gamma, policy, tag, d.steps, derive_seed(d.seed, 5))
}

fn algorithm_name(alg: Algorithm) -> String {
    serde_json::to_value(alg)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_else(|| format!("{alg:?}"))
}

/// One-line summary for log output.
pub fn describe(cfg: &ExperimentConfig) -> String {
    format!(
        "{} on {} with {} ({} seeds)",
        algorithm_name(cfg.agent.algorithm),
        cfg.env.name(),
        cfg.spectrum,
        cfg.seeds.len()
    )
}
