//! Distributional actor-critic agents for static spectral risk.
//!
//! One [`Agent`] type covers the four algorithms; they differ in the actor
//! head and in how the actor is updated:
//!
//! | algorithm  | actor                   | actor update                         |
//! |------------|-------------------------|--------------------------------------|
//! | `ac-srm`   | categorical / Gaussian  | `A * grad log pi`                    |
//! | `oac-srm`  | categorical / Gaussian  | `min(exp(A / lambda), 100) * grad log pi` |
//! | `td3-srm`  | deterministic           | chain rule through `h'(s + c G)`     |
//! | `td3bc-srm`| deterministic           | as above minus `lambda (pi - a_hat)` |

mod actor;
mod train;

pub use actor::{
    box_geometry, encode_action, encoded_action_dim, gaussian_noise, target_policy_smoothing, Actor,
    ActorKind,
};
pub use train::{evaluate_policy, train_offline, train_online, EpisodeResult, TrainLog};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::data::TransitionRecord;
use crate::env::ActionSpace;
use crate::error::{Result, SrmError};
use crate::nn::{batch_matrix, Adam, Gradients, Mlp, MlpState};
use crate::quantile::{huber_quantile_loss, QuantileDistribution};
use crate::risk_fn::PiecewiseLinearH;
use crate::spectrum::RiskSpectrum;
use crate::{seeded_rng, SimRng};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    AcSrm,
    OacSrm,
    Td3Srm,
    Td3bcSrm,
}

impl Algorithm {
    pub fn is_offline(self) -> bool {
        matches!(self, Algorithm::OacSrm | Algorithm::Td3bcSrm)
    }

    pub fn is_deterministic(self) -> bool {
        matches!(self, Algorithm::Td3Srm | Algorithm::Td3bcSrm)
    }
}

/// How critic atoms are turned into a scalar action value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskMode {
    /// `E[h(s + c G)] / c` with the outer-loop `h`.
    #[default]
    Static,
    /// Spectral risk of `G` at every state, ignoring `(s, c)`.
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub risk_mode: RiskMode,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub quantiles: usize,
    /// Polyak rate `nu` of the target networks.
    pub polyak: f64,
    pub policy_delay: usize,
    /// Huber threshold `kappa`.
    pub kappa: f64,
    /// Temperature of the advantage weights (`oac-srm`).
    pub lambda: f64,
    pub weight_clip: f64,
    /// Behaviour-cloning strength (`td3bc-srm`).
    pub bc_coef: f64,
    pub exploration_noise: f64,
    pub target_noise: f64,
    pub noise_clip: f64,
    pub gaussian_std: f64,
    /// Monte-Carlo samples for `V` under a Gaussian target actor.
    pub advantage_samples: usize,
    /// Steps between `h` refreshes (`T_inner`).
    pub h_interval: usize,
    /// Initial states pooled when refreshing `h`.
    pub h_states: usize,
    /// Uniformly random actions before learning starts (online only).
    pub warmup_steps: usize,
    pub replay_capacity: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            algorithm: Algorithm::Td3Srm,
            risk_mode: RiskMode::Static,
            hidden: vec![256, 256],
            lr: 3e-4,
            gamma: 0.99,
            batch_size: 256,
            quantiles: 50,
            polyak: 5e-3,
            policy_delay: 2,
            kappa: 1.0,
            lambda: 1.0,
            weight_clip: 100.0,
            bc_coef: 2.5,
            exploration_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            gaussian_std: 0.1,
            advantage_samples: 10,
            h_interval: 500,
            h_states: 10,
            warmup_steps: 1000,
            replay_capacity: 1_000_000,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("kappa", self.kappa),
            ("lambda", self.lambda),
            ("weight_clip", self.weight_clip),
            ("gaussian_std", self.gaussian_std),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return Err(SrmError::Config {
                    key: format!("agent.{key}"),
                    message: format!("must be positive, got {v}"),
                });
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("quantiles", self.quantiles),
            ("policy_delay", self.policy_delay),
            ("advantage_samples", self.advantage_samples),
            ("h_interval", self.h_interval),
            ("h_states", self.h_states),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(SrmError::Config {
                    key: format!("agent.{key}"),
                    message: "must be at least 1".into(),
                });
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(SrmError::Config {
                key: "agent.gamma".into(),
                message: format!("must lie in [0, 1), got {}", self.gamma),
            });
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return Err(SrmError::Config {
                key: "agent.polyak".into(),
                message: format!("must lie in (0, 1], got {}", self.polyak),
            });
        }
        if self.hidden.contains(&0) {
            return Err(SrmError::Config {
                key: "agent.hidden".into(),
                message: "layer widths must be positive".into(),
            });
        }
        for (key, v) in [
            ("bc_coef", self.bc_coef),
            ("exploration_noise", self.exploration_noise),
            ("target_noise", self.target_noise),
            ("noise_clip", self.noise_clip),
        ] {
            if !(v >= 0.0) {
                return Err(SrmError::Config {
                    key: format!("agent.{key}"),
                    message: format!("must be non-negative, got {v}"),
                });
            }
        }
        Ok(())
    }
}

/// Scalar value of a set of atoms and its gradient with respect to them.
#[derive(Debug, Clone)]
enum Scorer<'a> {
    Static(&'a PiecewiseLinearH),
    Iterative(Vec<f64>),
}

impl Scorer<'_> {
    fn score(&self, s: f64, c: f64, atoms: &[f64]) -> f64 {
        match self {
            Scorer::Static(h) => h.q_value_atoms(s, c, atoms),
            Scorer::Iterative(weights) => {
                let mut sorted = atoms.to_vec();
                sorted.sort_by(f64::total_cmp);
                sorted.iter().zip(weights).map(|(q, w)| q * w).sum()
            }
        }
    }

    fn grad(&self, s: f64, c: f64, atoms: &[f64], out: &mut [f64]) {
        match self {
            Scorer::Static(h) => h.q_value_atom_grad(s, c, atoms, out),
            Scorer::Iterative(weights) => {
                let mut order: Vec<usize> = (0..atoms.len()).collect();
                order.sort_by(|&a, &b| atoms[a].total_cmp(&atoms[b]).then(a.cmp(&b)));
                for (rank, &j) in order.iter().enumerate() {
                    out[j] = weights[rank];
                }
            }
        }
    }
}

/// Diagnostics of one gradient step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Actor objective when the actor was updated on this step.
    pub actor_objective: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    cfg: AgentConfig,
    spectrum: RiskSpectrum,
    obs_dim: usize,
    space: ActionSpace,
    actor: Actor,
    actor_target: Actor,
    actor_opt: Adam,
    critics: [Mlp; 2],
    critic_targets: [Mlp; 2],
    critic_opts: [Adam; 2],
    h: PiecewiseLinearH,
    updates: u64,
    rng: SimRng,
}

impl Agent {
    pub fn new(cfg: AgentConfig, spectrum: RiskSpectrum, obs_dim: usize, space: ActionSpace, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let kind = match (cfg.algorithm.is_deterministic(), &space) {
            (true, ActionSpace::Discrete(_)) => {
                return Err(SrmError::Config {
                    key: "agent.algorithm".into(),
                    message: format!("{:?} needs a continuous action space", cfg.algorithm),
                })
            }
            (true, _) => ActorKind::Deterministic,
            (false, ActionSpace::Discrete(_)) => ActorKind::Categorical,
            (false, _) => ActorKind::Gaussian,
        };
        let mut rng = seeded_rng(seed);
        let feat = obs_dim + 2;
        let act_dim = encoded_action_dim(&space);
        let sizes = |input: usize, output: usize| {
            let mut v = vec![input];
            v.extend(&cfg.hidden);
            v.push(output);
            v
        };
        let actor_net = Mlp::new(&sizes(feat, act_dim), &mut rng)?;
        let actor = Actor::new(kind, actor_net, space.clone(), cfg.gaussian_std)?;
        let critics = [
            Mlp::new(&sizes(feat + act_dim, cfg.quantiles), &mut rng)?,
            Mlp::new(&sizes(feat + act_dim, cfg.quantiles), &mut rng)?,
        ];
        let actor_opt = Adam::new(actor.net.num_params(), cfg.lr);
        let critic_opts = [
            Adam::new(critics[0].num_params(), cfg.lr),
            Adam::new(critics[1].num_params(), cfg.lr),
        ];
        let h = PiecewiseLinearH::build(&spectrum, &QuantileDistribution::point_mass(0.0, cfg.quantiles)?);
        Ok(Agent {
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            actor_opt,
            critics,
            critic_opts,
            h,
            updates: 0,
            rng,
            cfg,
            spectrum,
            obs_dim,
            space,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn spectrum(&self) -> &RiskSpectrum {
        &self.spectrum
    }

    pub fn h(&self) -> &PiecewiseLinearH {
        &self.h
    }

    pub fn actor(&self) -> &Actor {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut Actor {
        &mut self.actor
    }

    pub fn critics(&self) -> &[Mlp; 2] {
        &self.critics
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn set_h(&mut self, h: PiecewiseLinearH) {
        self.h = h;
    }

    pub fn rng_mut(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    fn scorer(&self) -> Scorer<'_> {
        match self.cfg.risk_mode {
            RiskMode::Static => Scorer::Static(&self.h),
            RiskMode::Iterative => Scorer::Iterative(self.spectrum.interval_weights(self.cfg.quantiles)),
        }
    }

    /// Action for extended-state features; `explore` adds the behaviour
    /// noise (Gaussian exploration or sampling from a stochastic actor).
    pub fn act(&self, features: &[f64], explore: bool, rng: &mut SimRng) -> Result<Vec<f64>> {
        let x = batch_matrix(&[features.to_vec()])?;
        let head = self.actor.forward(&x)?;
        let head = head.row(0);
        let head = head.as_slice().expect("contiguous");
        Ok(match (explore, self.actor.kind) {
            (false, _) => self.actor.mode_from_head(head),
            (true, ActorKind::Deterministic) => {
                let (_, half) = box_geometry(&self.space);
                let noise = gaussian_noise(self.cfg.exploration_noise, head.len(), rng);
                let mut a: Vec<f64> = head.iter().zip(&noise).zip(&half).map(|((m, e), h)| m + e * h).collect();
                self.space.clip(&mut a);
                a
            }
            (true, _) => self.actor.sample_from_head(head, rng),
        })
    }

    fn critic_input(&self, features: &Array2<f64>, actions: &[Vec<f64>]) -> Result<Array2<f64>> {
        let enc: Vec<Vec<f64>> = actions.iter().map(|a| encode_action(&self.space, a)).collect();
        let enc = batch_matrix(&enc)?;
        ndarray::concatenate(ndarray::Axis(1), &[features.view(), enc.view()]).map_err(|e| SrmError::shape(e.to_string()))
    }

    /// Critic-1 atoms at the given features and actions.
    pub fn critic_atoms(&self, features: &Array2<f64>, actions: &[Vec<f64>]) -> Result<Array2<f64>> {
        self.critics[0].forward(&self.critic_input(features, actions)?)
    }

    /// Risk-adjusted value of critic-1 atoms for one transition.
    pub fn q_value(&self, features: &[f64], action: &[f64]) -> Result<f64> {
        let x = batch_matrix(&[features.to_vec()])?;
        let atoms = self.critic_atoms(&x, &[action.to_vec()])?;
        let (s, c) = split_sc(features);
        Ok(self.scorer().score(s, c, atoms.row(0).as_slice().expect("contiguous")))
    }

    /// Rebuilds `h` from critic-1 atoms at `(x0, mode of the actor)` pooled
    /// over the given initial observations.
    pub fn refresh_h(&mut self, initial_obs: &[Vec<f64>]) -> Result<()> {
        if initial_obs.is_empty() {
            return Err(SrmError::input("h refresh needs at least one initial state"));
        }
        let feats: Vec<Vec<f64>> = initial_obs
            .iter()
            .map(|o| {
                let mut f = o.clone();
                f.extend([0.0, 1.0]);
                f
            })
            .collect();
        let x = batch_matrix(&feats)?;
        let head = self.actor.forward(&x)?;
        let actions: Vec<Vec<f64>> = head
            .rows()
            .into_iter()
            .map(|r| self.actor.mode_from_head(r.as_slice().expect("contiguous")))
            .collect();
        let atoms = self.critic_atoms(&x, &actions)?;
        let pooled: Vec<f64> = atoms.iter().copied().collect();
        if pooled.iter().any(|v| !v.is_finite()) {
            return Err(SrmError::Instability("critic produced non-finite atoms".into()));
        }
        let dist = QuantileDistribution::empirical_quantiles(&pooled, self.cfg.quantiles)?;
        self.h = PiecewiseLinearH::build(&self.spectrum, &dist);
        Ok(())
    }

    /// Target atoms `r + gamma G'` per transition (just `r` at terminals).
    pub fn critic_targets(&mut self, batch: &[&TransitionRecord]) -> Result<Array2<f64>> {
        let n = self.cfg.quantiles;
        let next_feats: Vec<Vec<f64>> = batch.iter().map(|r| r.next_state().features()).collect();
        let next_x = batch_matrix(&next_feats)?;
        let head = self.actor_target.forward(&next_x)?;
        let mut next_actions = Vec::with_capacity(batch.len());
        for row in head.rows() {
            let row = row.as_slice().expect("contiguous");
            let a = match self.actor_target.kind {
                ActorKind::Deterministic => {
                    let noise = gaussian_noise(self.cfg.target_noise, row.len(), &mut self.rng);
                    target_policy_smoothing(row, &noise, self.cfg.noise_clip, &self.space)
                }
                _ => self.actor_target.sample_from_head(row, &mut self.rng),
            };
            next_actions.push(a);
        }
        let input = self.critic_input(&next_x, &next_actions)?;
        let g1 = self.critic_targets[0].forward(&input)?;
        let g2 = self.critic_targets[1].forward(&input)?;
        let scorer = self.scorer();
        let mut targets = Array2::zeros((batch.len(), n));
        for (b, rec) in batch.iter().enumerate() {
            let mut row = targets.row_mut(b);
            if rec.done {
                row.fill(rec.reward);
                continue;
            }
            let a1 = g1.row(b);
            let a2 = g2.row(b);
            let a1 = a1.as_slice().expect("contiguous");
            let a2 = a2.as_slice().expect("contiguous");
            let q1 = scorer.score(rec.next_s, rec.next_c, a1);
            let q2 = scorer.score(rec.next_s, rec.next_c, a2);
            let chosen = if q1 <= q2 { a1 } else { a2 };
            for (t, g) in row.iter_mut().zip(chosen) {
                *t = rec.reward + self.cfg.gamma * g;
            }
        }
        Ok(targets)
    }

    /// Quantile-regression step on both critics; returns the mean loss.
    pub fn update_critics(&mut self, batch: &[&TransitionRecord]) -> Result<f64> {
        let targets = self.critic_targets(batch)?;
        let feats: Vec<Vec<f64>> = batch.iter().map(|r| r.state().features()).collect();
        let actions: Vec<Vec<f64>> = batch.iter().map(|r| r.action.clone()).collect();
        let input = self.critic_input(&batch_matrix(&feats)?, &actions)?;
        let m = batch.len() as f64;
        let mut total = 0.0;
        for k in 0..2 {
            let (pred, tape) = self.critics[k].forward_tape(&input)?;
            let mut d_out = Array2::zeros(pred.dim());
            for b in 0..batch.len() {
                let p = pred.row(b);
                let t = targets.row(b);
                let (loss, grad) = huber_quantile_loss(
                    p.as_slice().expect("contiguous"),
                    t.as_slice().expect("contiguous"),
                    self.cfg.kappa,
                )?;
                total += loss / m;
                d_out.row_mut(b).iter_mut().zip(grad).for_each(|(d, g)| *d = g / m);
            }
            let (grads, _) = self.critics[k].backward(&tape, &d_out)?;
            self.critic_opts[k].apply(&mut self.critics[k], &grads)?;
        }
        if !total.is_finite() {
            return Err(SrmError::Instability(format!("critic loss became {total}")));
        }
        Ok(total / 2.0)
    }

    /// `A(x, a) = Q1(x, a) - E_{a' ~ pi_target}[Q1(x, a')]` per transition.
    pub fn advantages(&mut self, batch: &[&TransitionRecord]) -> Result<Vec<f64>> {
        let feats: Vec<Vec<f64>> = batch.iter().map(|r| r.state().features()).collect();
        let x = batch_matrix(&feats)?;
        let taken: Vec<Vec<f64>> = batch.iter().map(|r| r.action.clone()).collect();
        let q_taken = self.scored(&x, &feats, &taken)?;
        let mut baseline = vec![0.0; batch.len()];
        match (&self.space, self.actor_target.kind) {
            (ActionSpace::Discrete(n), _) => {
                let probs = self.actor_target.forward(&x)?;
                for a in 0..*n {
                    let actions = vec![vec![a as f64]; batch.len()];
                    let q = self.scored(&x, &feats, &actions)?;
                    for b in 0..batch.len() {
                        baseline[b] += probs[[b, a]] * q[b];
                    }
                }
            }
            _ => {
                let head = self.actor_target.forward(&x)?;
                let k = self.cfg.advantage_samples;
                for _ in 0..k {
                    let actions: Vec<Vec<f64>> = head
                        .rows()
                        .into_iter()
                        .map(|r| self.actor_target.sample_from_head(r.as_slice().expect("contiguous"), &mut self.rng))
                        .collect();
                    let q = self.scored(&x, &feats, &actions)?;
                    for b in 0..batch.len() {
                        baseline[b] += q[b] / k as f64;
                    }
                }
            }
        }
        Ok(q_taken.iter().zip(&baseline).map(|(q, v)| q - v).collect())
    }

    fn scored(&self, x: &Array2<f64>, feats: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<f64>> {
        let atoms = self.critic_atoms(x, actions)?;
        let scorer = self.scorer();
        Ok(feats
            .iter()
            .enumerate()
            .map(|(b, f)| {
                let (s, c) = split_sc(f);
                scorer.score(s, c, atoms.row(b).as_slice().expect("contiguous"))
            })
            .collect())
    }

    /// Per-sample actor weights: `A` online, clipped `exp(A / lambda)`
    /// offline.
    pub fn actor_weights(&self, advantages: &[f64]) -> Vec<f64> {
        if self.cfg.algorithm.is_offline() {
            advantages
                .iter()
                .map(|a| (a / self.cfg.lambda).exp().min(self.cfg.weight_clip))
                .collect()
        } else {
            advantages.to_vec()
        }
    }

    /// Gradient (for ascent) of `mean_b w_b log pi(a_b | x_b)`.
    pub fn stochastic_actor_gradient(&mut self, batch: &[&TransitionRecord]) -> Result<(f64, Gradients)> {
        let adv = self.advantages(batch)?;
        let weights: Vec<f64> = self.actor_weights(&adv).iter().map(|w| w / batch.len() as f64).collect();
        let feats: Vec<Vec<f64>> = batch.iter().map(|r| r.state().features()).collect();
        let actions: Vec<Vec<f64>> = batch.iter().map(|r| r.action.clone()).collect();
        self.actor.weighted_log_prob_grad(&batch_matrix(&feats)?, &actions, &weights)
    }

    /// Deterministic objective `mean_b [Q1(x_b, pi(x_b)) - lambda/2 |pi(x_b) - a_b|^2]`
    /// (the penalty only for `td3bc-srm`).
    pub fn deterministic_objective(&self, batch: &[&TransitionRecord]) -> Result<f64> {
        let feats: Vec<Vec<f64>> = batch.iter().map(|r| r.state().features()).collect();
        let x = batch_matrix(&feats)?;
        let mu = self.actor.forward(&x)?;
        let actions: Vec<Vec<f64>> = mu.rows().into_iter().map(|r| r.to_vec()).collect();
        let q = self.scored(&x, &feats, &actions)?;
        let bc = self.bc_coef();
        let m = batch.len() as f64;
        Ok(batch
            .iter()
            .zip(&actions)
            .zip(&q)
            .map(|((rec, a), q)| {
                let dist: f64 = a.iter().zip(&rec.action).map(|(p, h)| (p - h).powi(2)).sum();
                (q - 0.5 * bc * dist) / m
            })
            .sum())
    }

    fn bc_coef(&self) -> f64 {
        if self.cfg.algorithm == Algorithm::Td3bcSrm {
            self.cfg.bc_coef
        } else {
            0.0
        }
    }

    /// Gradient (for ascent) of [`Self::deterministic_objective`]: atoms are
    /// weighted by `h'(s + c G_j) / N` and pushed back through critic 1 and
    /// the actor.
    pub fn deterministic_actor_gradient(&self, batch: &[&TransitionRecord]) -> Result<(f64, Gradients)> {
        let feats: Vec<Vec<f64>> = batch.iter().map(|r| r.state().features()).collect();
        let x = batch_matrix(&feats)?;
        let (raw, mu, actor_tape) = self.actor.forward_tape(&x)?;
        let actions: Vec<Vec<f64>> = mu.rows().into_iter().map(|r| r.to_vec()).collect();
        let input = self.critic_input(&x, &actions)?;
        let (atoms, critic_tape) = self.critics[0].forward_tape(&input)?;
        let scorer = self.scorer();
        let m = batch.len() as f64;
        let mut d_atoms = Array2::zeros(atoms.dim());
        let mut objective = 0.0;
        for (b, f) in feats.iter().enumerate() {
            let (s, c) = split_sc(f);
            let row = atoms.row(b);
            let row = row.as_slice().expect("contiguous");
            objective += scorer.score(s, c, row) / m;
            let mut g = vec![0.0; row.len()];
            scorer.grad(s, c, row, &mut g);
            d_atoms.row_mut(b).iter_mut().zip(g).for_each(|(d, g)| *d = g / m);
        }
        let (_, d_input) = self.critics[0].backward(&critic_tape, &d_atoms)?;
        let feat_dim = x.ncols();
        let mut d_action = d_input.slice(s![.., feat_dim..]).to_owned();
        let bc = self.bc_coef();
        if bc > 0.0 {
            for (b, rec) in batch.iter().enumerate() {
                for j in 0..d_action.ncols() {
                    let diff = mu[[b, j]] - rec.action[j];
                    objective -= 0.5 * bc * diff * diff / m;
                    d_action[[b, j]] -= bc * diff / m;
                }
            }
        }
        let grads = self.actor.backward_through_head(&raw, &actor_tape, &d_action)?;
        Ok((objective, grads))
    }

    fn ascend_actor(&mut self, grads: &Gradients) -> Result<()> {
        let mut params = self.actor.net.params();
        let descent: Vec<f64> = grads.flat().iter().map(|g| -g).collect();
        self.actor_opt.step(&mut params, &descent)?;
        self.actor.net.set_params(&params)
    }

    fn update_targets(&mut self) {
        let nu = self.cfg.polyak;
        for k in 0..2 {
            self.critic_targets[k].polyak_from(&self.critics[k], nu);
        }
        self.actor_target.net.polyak_from(&self.actor.net, nu);
    }

    /// One training iteration: critic step, then (every `policy_delay`
    /// iterations) an actor step and target blending.
    pub fn update(&mut self, batch: &[&TransitionRecord]) -> Result<UpdateStats> {
        let critic_loss = self.update_critics(batch)?;
        self.updates += 1;
        let mut actor_objective = None;
        if self.updates.is_multiple_of(self.cfg.policy_delay as u64) {
            let (obj, grads) = if self.actor.kind == ActorKind::Deterministic {
                self.deterministic_actor_gradient(batch)?
            } else {
                self.stochastic_actor_gradient(batch)?
            };
            if !obj.is_finite() {
                return Err(SrmError::Instability(format!("actor objective became {obj}")));
            }
            self.ascend_actor(&grads)?;
            self.update_targets();
            actor_objective = Some(obj);
        }
        Ok(UpdateStats {
            critic_loss,
            actor_objective,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            spectrum: self.spectrum,
            obs_dim: self.obs_dim,
            action_space: self.space.clone(),
            actor: self.actor.net.to_state(),
            actor_target: self.actor_target.net.to_state(),
            critics: [self.critics[0].to_state(), self.critics[1].to_state()],
            critic_targets: [self.critic_targets[0].to_state(), self.critic_targets[1].to_state()],
            actor_opt: self.actor_opt.clone(),
            critic_opts: self.critic_opts.clone(),
            updates: self.updates,
            h: self.h.clone(),
        }
    }

    /// Restores an agent; `seed` reseeds its training randomness.
    pub fn from_checkpoint(cp: &Checkpoint, seed: u64) -> Result<Self> {
        if cp.version != CHECKPOINT_VERSION {
            return Err(SrmError::Version {
                found: cp.version.to_string(),
                expected: CHECKPOINT_VERSION,
            });
        }
        let mut agent = Agent::new(cp.config.clone(), cp.spectrum, cp.obs_dim, cp.action_space.clone(), seed)?;
        let restore = |state: &MlpState, like: &Mlp| -> Result<Mlp> {
            let net = Mlp::from_state(state)?;
            if net.sizes() != like.sizes() {
                return Err(SrmError::shape(format!("checkpoint layers {:?} vs {:?}", net.sizes(), like.sizes())));
            }
            Ok(net)
        };
        agent.actor.net = restore(&cp.actor, &agent.actor.net)?;
        agent.actor_target.net = restore(&cp.actor_target, &agent.actor.net)?;
        for k in 0..2 {
            agent.critics[k] = restore(&cp.critics[k], &agent.critics[k])?;
            agent.critic_targets[k] = restore(&cp.critic_targets[k], &agent.critics[k])?;
        }
        agent.actor_opt = cp.actor_opt.clone();
        agent.critic_opts = cp.critic_opts.clone();
        agent.updates = cp.updates;
        agent.h = cp.h.clone();
        Ok(agent)
    }
}

fn split_sc(features: &[f64]) -> (f64, f64) {
    let n = features.len();
    (features[n - 2], features[n - 1])
}

/// Everything needed to resume or evaluate an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: AgentConfig,
    pub spectrum: RiskSpectrum,
    pub obs_dim: usize,
    pub action_space: ActionSpace,
    pub actor: MlpState,
    pub actor_target: MlpState,
    pub critics: [MlpState; 2],
    pub critic_targets: [MlpState; 2],
    pub actor_opt: Adam,
    pub critic_opts: [Adam; 2],
    pub updates: u64,
    pub h: PiecewiseLinearH,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => Ok(serde_json::from_value(value)?),
            other => Err(SrmError::Version {
                found: other.map_or("none".into(), |v| v.to_string()),
                expected: CHECKPOINT_VERSION,
            }),
        }
    }
}
