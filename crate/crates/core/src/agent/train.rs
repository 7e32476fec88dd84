//! Online and offline training loops and policy evaluation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Agent;
use crate::data::{sample_batch, ReplayBuffer, TransitionDataset, TransitionRecord};
use crate::env::{ActionSpace, Environment, ExtendedState};
use crate::error::{Result, SrmError};
use crate::exec::{map_indexed, Execution};
use crate::{derive_seed, seeded_rng, SimRng};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Undiscounted returns of completed training episodes (online only).
    pub episode_returns: Vec<f64>,
    /// Critic loss of every update.
    pub critic_losses: Vec<f64>,
    pub h_refreshes: usize,
    pub env_steps: usize,
    pub updates: u64,
}

fn random_action(space: &ActionSpace, rng: &mut SimRng) -> Vec<f64> {
    match space {
        ActionSpace::Discrete(n) => vec![rng.random_range(0..*n) as f64],
        ActionSpace::Continuous { low, high } => low.iter().zip(high).map(|(l, h)| rng.random_range(*l..=*h)).collect(),
    }
}

/// Algorithms 2 / 4 with environment interaction: `h` is refreshed every
/// `h_interval` steps from initial states of a probe copy of `env`, and one
/// gradient update follows each environment step once the warm-up is over.
/// Returns the log and the replay buffer (the "-Replay" dataset source).
pub fn train_online(
    agent: &mut Agent,
    env: &mut dyn Environment,
    steps: usize,
    seed: u64,
) -> Result<(TrainLog, ReplayBuffer)> {
    let cfg = agent.config().clone();
    if cfg.algorithm.is_offline() {
        return Err(SrmError::Config {
            key: "agent.algorithm".into(),
            message: format!("{:?} is an offline algorithm", cfg.algorithm),
        });
    }
    let mut env_rng = seeded_rng(derive_seed(seed, 1));
    let mut h_rng = seeded_rng(derive_seed(seed, 2));
    let mut act_rng = seeded_rng(derive_seed(seed, 3));
    let mut batch_rng = seeded_rng(derive_seed(seed, 4));
    let mut probe = env.boxed_clone();
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut log = TrainLog::default();
    let space = env.action_space();

    let mut state = ExtendedState::initial(env.reset(&mut env_rng));
    let (mut episode, mut t, mut ret) = (0u64, 0u64, 0.0);
    for step in 0..steps {
        if step % cfg.h_interval == 0 {
            let obs: Vec<Vec<f64>> = (0..cfg.h_states).map(|_| probe.reset(&mut h_rng)).collect();
            agent.refresh_h(&obs)?;
            log.h_refreshes += 1;
        }
        let features = state.features();
        let action = if step < cfg.warmup_steps {
            random_action(&space, &mut act_rng)
        } else {
            agent.act(&features, true, &mut act_rng)?
        };
        let out = env.step(&action, &mut env_rng);
        let next = state.step(out.reward, cfg.gamma, out.obs);
        buffer.push(TransitionRecord {
            episode,
            t,
            obs: state.base.clone(),
            s: state.s,
            c: state.c,
            action,
            reward: out.reward,
            next_obs: next.base.clone(),
            next_s: next.s,
            next_c: next.c,
            done: out.done,
        });
        ret += out.reward;
        if out.done {
            log.episode_returns.push(ret);
            state = ExtendedState::initial(env.reset(&mut env_rng));
            episode += 1;
            t = 0;
            ret = 0.0;
        } else {
            state = next;
            t += 1;
        }
        if step >= cfg.warmup_steps && buffer.len() >= cfg.batch_size {
            let batch = buffer.sample(cfg.batch_size, &mut batch_rng)?;
            let stats = agent.update(&batch)?;
            log.critic_losses.push(stats.critic_loss);
        }
        log.env_steps += 1;
    }
    log.updates = agent.updates();
    Ok((log, buffer))
}

/// Algorithms 3 / 4 on a fixed dataset; `h` is refreshed from episode
/// starts found in the data.
pub fn train_offline(agent: &mut Agent, dataset: &TransitionDataset, steps: usize, seed: u64) -> Result<TrainLog> {
    let cfg = agent.config().clone();
    if dataset.is_empty() {
        return Err(SrmError::input("offline training needs a non-empty dataset"));
    }
    if dataset.meta.obs_dim != agent.obs_dim() || dataset.meta.action_dim != agent.action_space().dim() {
        return Err(SrmError::input(format!(
            "dataset dims (obs {}, action {}) do not match the agent (obs {}, action {})",
            dataset.meta.obs_dim,
            dataset.meta.action_dim,
            agent.obs_dim(),
            agent.action_space().dim()
        )));
    }
    let starts: Vec<&TransitionRecord> = dataset.records.iter().filter(|r| r.t == 0).collect();
    let starts = if starts.is_empty() {
        dataset.records.iter().collect()
    } else {
        starts
    };
    let mut h_rng = seeded_rng(derive_seed(seed, 2));
    let mut batch_rng = seeded_rng(derive_seed(seed, 4));
    let mut log = TrainLog::default();
    for step in 0..steps {
        if step % cfg.h_interval == 0 {
            let obs: Vec<Vec<f64>> = (0..cfg.h_states)
                .map(|_| starts[h_rng.random_range(0..starts.len())].obs.clone())
                .collect();
            agent.refresh_h(&obs)?;
            log.h_refreshes += 1;
        }
        let batch = sample_batch(&dataset.records, cfg.batch_size, &mut batch_rng)?;
        let stats = agent.update(&batch)?;
        log.critic_losses.push(stats.critic_loss);
    }
    log.updates = agent.updates();
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Undiscounted sum of rewards.
    pub total: f64,
    pub rewards: Vec<f64>,
}

/// Greedy rollouts of `episodes` episodes; episode `i` uses its own
/// environment copy and a generator seeded from `(seed, i)`, so results
/// do not depend on the execution mode.
pub fn evaluate_policy(
    agent: &Agent,
    env: &dyn Environment,
    episodes: usize,
    seed: u64,
    mode: Execution,
) -> Result<Vec<EpisodeResult>> {
    let gamma = agent.config().gamma;
    map_indexed(mode, episodes, |i| -> Result<EpisodeResult> {
        let mut env = env.boxed_clone();
        let mut rng = seeded_rng(derive_seed(seed, i as u64));
        let mut state = ExtendedState::initial(env.reset(&mut rng));
        let mut rewards = Vec::with_capacity(env.horizon());
        loop {
            let action = agent.act(&state.features(), false, &mut rng)?;
            let out = env.step(&action, &mut rng);
            rewards.push(out.reward);
            if out.done {
                break;
            }
            state = state.step(out.reward, gamma, out.obs);
        }
        Ok(EpisodeResult {
            total: rewards.iter().sum(),
            rewards,
        })
    })
    .into_iter()
    .collect()
}
