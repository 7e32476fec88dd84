//! Oracle suites: exact identities, enumeration optima, finite-difference
//! gradient checks and end-to-end runs, each reported as one check.
//!
//! `Scale::Quick` shrinks the sample counts and replaces the long neural
//! runs by their tabular part or shorter versions;
//! `Scale::Full` runs every check at its documented size.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{Actor, ActorKind, Agent, AgentConfig, Algorithm};
use crate::config::{DatasetSource, EnvConfig, ExperimentConfig};
use crate::data::TransitionRecord;
use crate::env::{fixtures, ActionSpace, Environment, TradingConfig, TradingEnv};
use crate::error::Result;
use crate::experiment;
use crate::metrics::{empirical_cvar, mean, normalized_score, TRADING_REFERENCE};
use crate::nn::{batch_matrix, Mlp};
use crate::quantile::{huber_quantile_loss, midpoint_level, QuantileDistribution};
use crate::spectrum::normal_cdf;
use crate::tabular::{self, oracle, BilevelConfig, ExtendedMdp, SoftmaxPolicy, StepSchedule};
use crate::{seeded_rng, PiecewiseLinearH, RiskSpectrum, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Quick,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: usize,
    pub name: String,
    pub status: Status,
    pub detail: String,
    pub seconds: f64,
    /// Wall-clock budget; exceeding it fails the check.
    pub budget: Option<f64>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// `[PASS] 3 name (1.2s/30s): detail`
    pub fn line(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
        };
        let time = match self.budget {
            Some(b) => format!("{:.1}s/{b:.0}s", self.seconds),
            None => format!("{:.1}s", self.seconds),
        };
        format!("[{tag}] {} {} ({time}): {}", self.id, self.name, self.detail)
    }
}

fn timed<F>(id: usize, name: &str, budget: Option<f64>, f: F) -> CheckOutcome
where
    F: FnOnce() -> Result<(bool, String)>,
{
    let start = Instant::now();
    let result = f();
    let seconds = start.elapsed().as_secs_f64();
    let (status, detail) = match result {
        Ok((true, d)) if budget.is_none_or(|b| seconds <= b) => (Status::Pass, d),
        Ok((true, d)) => (Status::Fail, format!("{d}; over the time budget")),
        Ok((false, d)) => (Status::Fail, d),
        Err(e) => (Status::Fail, format!("error: {e}")),
    };
    CheckOutcome {
        id,
        name: name.into(),
        status,
        detail,
        seconds,
        budget,
    }
}

/// One representative per spectrum family.
pub const SPECTRA: [&str; 7] = ["neutral", "cvar:0.2", "mc:0.2,0.4", "exp:2", "dp:2", "wang:0.5", "ph:2"];

fn spectra() -> Vec<RiskSpectrum> {
    SPECTRA.iter().map(|s| s.parse().expect("valid spectrum")).collect()
}

/// Relative error with a floor on the scale so that vanishing gradients
/// are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

// ---------------------------------------------------------------------------
// discretisation

/// A Gaussian mixture with exact quantiles by bisection.
struct Mixture {
    comps: Vec<(f64, f64, f64)>,
}

impl Mixture {
    fn random(rng: &mut SimRng) -> Self {
        let k = rng.random_range(1..=3);
        let mut comps: Vec<(f64, f64, f64)> = (0..k)
            .map(|_| (rng.random_range(0.2..1.0), rng.random_range(-5.0..5.0), rng.random_range(0.1..2.0)))
            .collect();
        let total: f64 = comps.iter().map(|c| c.0).sum();
        comps.iter_mut().for_each(|c| c.0 /= total);
        Mixture { comps }
    }

    fn cdf(&self, x: f64) -> f64 {
        self.comps.iter().map(|(w, m, s)| w * normal_cdf((x - m) / s)).sum()
    }

    fn quantile(&self, u: f64) -> f64 {
        let mut lo = self.comps.iter().map(|(_, m, s)| m - 40.0 * s).fold(f64::INFINITY, f64::min);
        let mut hi = self.comps.iter().map(|(_, m, s)| m + 40.0 * s).fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..70 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn quantiles(&self, n: usize) -> QuantileDistribution {
        QuantileDistribution::new((0..n).map(|i| self.quantile(midpoint_level(i, n))).collect()).expect("finite")
    }
}

/// Mean absolute error of `expect_h` against a fine-grid SRM at `N = 50`
/// and `N = 500`, per spectrum, over `count` random mixtures.
pub fn discretisation_errors(count: usize, seed: u64) -> Vec<(RiskSpectrum, f64, f64)> {
    let mut rng = seeded_rng(seed);
    let grids: Vec<[QuantileDistribution; 3]> = (0..count)
        .map(|_| {
            let m = Mixture::random(&mut rng);
            [m.quantiles(50), m.quantiles(500), m.quantiles(5000)]
        })
        .collect();
    spectra()
        .into_iter()
        .map(|spec| {
            let (mut e50, mut e500) = (0.0, 0.0);
            for [q50, q500, q5000] in &grids {
                let reference = spec.srm_of_quantiles(q5000);
                e50 += (PiecewiseLinearH::build(&spec, q50).expect(q50) - reference).abs();
                e500 += (PiecewiseLinearH::build(&spec, q500).expect(q500) - reference).abs();
            }
            (spec, e50 / count as f64, e500 / count as f64)
        })
        .collect()
}

pub fn check_discretisation(scale: Scale) -> CheckOutcome {
    let count = if scale == Scale::Full { 50 } else { 10 };
    timed(1, "srm discretisation O(1/N)", Some(10.0), || {
        let rows = discretisation_errors(count, 1);
        let mut ok = true;
        let mut parts = Vec::new();
        for (spec, e50, e500) in rows {
            let ratio = e500 / e50;
            ok &= ratio <= 0.2;
            parts.push(format!("{spec} {ratio:.3}"));
        }
        Ok((ok, format!("err(500)/err(50) over {count} mixtures, limit 0.2: {}", parts.join(", "))))
    })
}

pub fn check_cvar_identity() -> CheckOutcome {
    timed(2, "cvar error identity", None, || {
        let dist = QuantileDistribution::new(vec![0.0, 2.0])?;
        let spec = RiskSpectrum::cvar(0.5)?;
        let h = PiecewiseLinearH::build(&spec, &dist);
        let gap = h.expect(&dist) - spec.srm_of_quantiles(&dist);
        Ok(((gap - 1.0).abs() <= 1e-12, format!("expect_h - CVaR = {gap:e} (want 1 within 1e-12)")))
    })
}

// ---------------------------------------------------------------------------
// tabular theory

fn extended_fixtures() -> Result<Vec<(&'static str, ExtendedMdp)>> {
    fixtures::all().into_iter().map(|(n, m)| Ok((n, ExtendedMdp::new(m)?))).collect()
}

fn random_policy(ext: &ExtendedMdp, rng: &mut SimRng) -> SoftmaxPolicy {
    SoftmaxPolicy {
        logits: (0..ext.num_nodes())
            .map(|_| (0..ext.num_actions()).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect(),
    }
}

pub fn check_bilevel_monotone() -> CheckOutcome {
    timed(3, "bi-level monotone improvement", Some(30.0), || {
        let mut worst_drop: f64 = 0.0;
        let mut runs = 0;
        for (_, ext) in extended_fixtures()? {
            for spec in spectra() {
                let res = tabular::bilevel_train(&ext, &spec, &BilevelConfig::default())?;
                for w in res.objective_history.windows(2) {
                    worst_drop = worst_drop.max(w[0] - w[1]);
                }
                runs += 1;
            }
        }
        Ok((
            worst_drop <= 1e-8,
            format!("{runs} runs x 20 outer steps, largest decrease {worst_drop:.2e} (limit 1e-8)"),
        ))
    })
}

pub fn check_npg_optimality() -> CheckOutcome {
    timed(4, "inner NPG reaches enumeration optimum", Some(60.0), || {
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        for (_, ext) in extended_fixtures()? {
            let uniform = SoftmaxPolicy::uniform(&ext);
            let law = tabular::exact_return_distribution(&ext, &uniform)?;
            for spec in spectra() {
                let h = tabular::h_for_law(&spec, &law.initial, tabular::DEFAULT_QUANTILES)?;
                let (best, _) = oracle::best_deterministic(&ext, &h)?;
                let (_, hist) = tabular::npg_inner_loop(&ext, &uniform, &h, StepSchedule::RobbinsMonro(0.5), 2000)?;
                let last = *hist.last().expect("history");
                worst = worst.max(best - last);
                cases += 1;
            }
        }
        Ok((worst < 1e-3, format!("{cases} (fixture, h) cases, largest gap {worst:.2e} (limit 1e-3)")))
    })
}

pub fn check_perf_diff() -> CheckOutcome {
    timed(5, "performance-difference identity", Some(30.0), || {
        let mut rng = seeded_rng(17);
        let specs = spectra();
        let mut worst: f64 = 0.0;
        for (_, ext) in extended_fixtures()? {
            for pair in 0..20 {
                let pi = random_policy(&ext, &mut rng);
                let pi_new = random_policy(&ext, &mut rng);
                let law = tabular::exact_return_distribution(&ext, &random_policy(&ext, &mut rng))?;
                let h = tabular::h_for_law(&specs[pair % specs.len()], &law.initial, tabular::DEFAULT_QUANTILES)?;
                let (lhs, rhs) = tabular::perf_diff_check(&ext, &pi, &pi_new, &h)?;
                worst = worst.max((lhs - rhs).abs());
            }
        }
        Ok((worst <= 1e-8, format!("60 pairs, largest |lhs - rhs| {worst:.2e} (limit 1e-8)")))
    })
}

pub fn check_quantile_condition() -> CheckOutcome {
    timed(6, "fixed-point quantile condition", None, || {
        let mut bad = Vec::new();
        for (name, ext) in extended_fixtures()? {
            for spec in spectra() {
                let res = tabular::bilevel_train(&ext, &spec, &BilevelConfig::default())?;
                let v = tabular::quantile_condition_violations(&res.last_h, &res.final_law.initial, 1e-9);
                if !v.is_empty() {
                    bad.push(format!("{name}/{spec}: {v:?}"));
                }
            }
        }
        let detail = if bad.is_empty() {
            "every weighted breakpoint is a tau_hat-quantile of the exact law".to_string()
        } else {
            format!("violations: {}", bad.join("; "))
        };
        Ok((bad.is_empty(), detail))
    })
}

// ---------------------------------------------------------------------------
// gradients

fn huber_worst(instances: usize, rng: &mut SimRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let pred: Vec<f64> = (0..rng.random_range(1..8)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let targets: Vec<f64> = (0..rng.random_range(1..8)).map(|_| rng.random_range(-3.0..3.0)).collect();
        let kappa = rng.random_range(0.2..2.0);
        let near_kink = pred.iter().any(|q| {
            targets.iter().any(|y| {
                let u = (y - q).abs();
                u < 1e-4 || (u - kappa).abs() < 1e-4
            })
        });
        if near_kink {
            continue;
        }
        let (_, grad) = huber_quantile_loss(&pred, &targets, kappa)?;
        let eps = 1e-6;
        for (i, g) in grad.iter().enumerate() {
            let mut up = pred.clone();
            up[i] += eps;
            let mut down = pred.clone();
            down[i] -= eps;
            let fd = (huber_quantile_loss(&up, &targets, kappa)?.0 - huber_quantile_loss(&down, &targets, kappa)?.0)
                / (2.0 * eps);
            worst = worst.max(rel_err(fd, *g));
        }
        done += 1;
    }
    Ok(worst)
}

fn mlp_worst(instances: usize, rng: &mut SimRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let objective = |net: &Mlp, x: &Array2<f64>, w: &Array2<f64>| -> Result<f64> { Ok((net.forward(x)? * w).sum()) };
    for _ in 0..instances {
        let mut net = Mlp::new(&[4, 6, 5, 3], rng)?;
        let mut p = net.params();
        p.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        net.set_params(&p)?;
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let w = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
        let (_, tape) = net.forward_tape(&x)?;
        let (grads, _) = net.backward(&tape, &w)?;
        let eps = 1e-6;
        for (i, g) in grads.flat().into_iter().enumerate() {
            let mut probe = net.clone();
            let mut q = p.clone();
            q[i] += eps;
            probe.set_params(&q)?;
            let up = objective(&probe, &x, &w)?;
            q[i] -= 2.0 * eps;
            probe.set_params(&q)?;
            let down = objective(&probe, &x, &w)?;
            worst = worst.max(rel_err((up - down) / (2.0 * eps), g));
        }
    }
    Ok(worst)
}

fn log_prob_worst(instances: usize, rng: &mut SimRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let boxed = ActionSpace::Continuous {
        low: vec![-1.0, 0.0],
        high: vec![1.0, 2.0],
    };
    for k in 0..instances {
        let actor = if k % 2 == 0 {
            Actor::new(ActorKind::Categorical, Mlp::new(&[3, 5, 3], rng)?, ActionSpace::Discrete(3), 0.1)?
        } else {
            Actor::new(ActorKind::Gaussian, Mlp::new(&[3, 5, 2], rng)?, boxed.clone(), 0.3)?
        };
        let b = 4;
        let x = Array2::from_shape_fn((b, 3), |_| rng.random_range(-1.0..1.0));
        let head = actor.forward(&x)?;
        let actions: Vec<Vec<f64>> = (0..b)
            .map(|i| actor.sample_from_head(head.row(i).as_slice().expect("row"), rng))
            .collect();
        let weights: Vec<f64> = (0..b).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, grads) = actor.weighted_log_prob_grad(&x, &actions, &weights)?;
        let objective = |net: &Mlp| -> Result<f64> {
            let probe = Actor::new(
                if actor.space().is_discrete() { ActorKind::Categorical } else { ActorKind::Gaussian },
                net.clone(),
                actor.space().clone(),
                actor.std(),
            )?;
            let head = probe.forward(&x)?;
            Ok((0..b)
                .map(|i| weights[i] * probe.log_prob_from_head(head.row(i).as_slice().expect("row"), &actions[i]))
                .sum())
        };
        let net = actor.net.clone();
        let p = net.params();
        let eps = 1e-6;
        for (i, g) in grads.flat().into_iter().enumerate() {
            let mut probe = net.clone();
            let mut q = p.clone();
            q[i] += eps;
            probe.set_params(&q)?;
            let up = objective(&probe)?;
            q[i] -= 2.0 * eps;
            probe.set_params(&q)?;
            let down = objective(&probe)?;
            worst = worst.max(rel_err((up - down) / (2.0 * eps), g));
        }
    }
    Ok(worst)
}

fn small_agent(algorithm: Algorithm, spectrum: &str, seed: u64) -> Result<Agent> {
    let cfg = AgentConfig {
        algorithm,
        hidden: vec![8],
        batch_size: 6,
        quantiles: 5,
        warmup_steps: 0,
        ..AgentConfig::default()
    };
    Agent::new(cfg, spectrum.parse()?, 3, TradingEnv::new(TradingConfig::default())?.action_space(), seed)
}

fn random_records(n: usize, rng: &mut SimRng) -> Vec<TransitionRecord> {
    (0..n)
        .map(|i| {
            let s = rng.random_range(-1.0..1.0);
            let c = rng.random_range(0.5..1.0);
            let reward = rng.random_range(-1.0..1.0);
            TransitionRecord {
                episode: i as u64,
                t: 3,
                obs: vec![rng.random_range(0.5..1.5), rng.random_range(-1.0..1.0), 0.5],
                s,
                c,
                action: vec![rng.random_range(-1.0..1.0)],
                reward,
                next_obs: vec![rng.random_range(0.5..1.5), rng.random_range(-1.0..1.0), 0.48],
                next_s: s + c * reward,
                next_c: 0.99 * c,
                done: false,
            }
        })
        .collect()
}

fn random_h(spec: &RiskSpectrum, rng: &mut SimRng) -> Result<PiecewiseLinearH> {
    let atoms: Vec<f64> = (0..5).map(|_| rng.random_range(-1.5..1.5)).collect();
    Ok(PiecewiseLinearH::build(spec, &QuantileDistribution::new(atoms)?))
}

/// `d/da E[h(s + c Z(x, a))] / c` through `h'`, the critic and its input,
/// against central differences in the action.
fn chain_worst(instances: usize, rng: &mut SimRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let specs = spectra();
    while done < instances {
        let spec = &specs[done % specs.len()];
        let mut agent = small_agent(Algorithm::Td3Srm, &spec.to_string(), rng.random())?;
        agent.set_h(random_h(spec, rng)?);
        let rec = &random_records(1, rng)[0];
        let features = rec.state().features();
        let action = rec.action.clone();
        let mut input = features.clone();
        input.extend(&action);
        let critic = &agent.critics()[0];
        let (atoms, tape) = critic.forward_tape(&batch_matrix(&[input])?)?;
        let atoms = atoms.row(0).to_vec();
        // h is not differentiable at its breakpoints
        let kink = atoms
            .iter()
            .any(|z| agent.h().breakpoints().iter().any(|q| (rec.s + rec.c * z - q).abs() < 1e-4));
        if kink {
            continue;
        }
        let mut d_atoms = vec![0.0; atoms.len()];
        agent.h().q_value_atom_grad(rec.s, rec.c, &atoms, &mut d_atoms);
        // q_value divides by c; the atom gradient already cancels it
        let d_out = Array2::from_shape_vec((1, atoms.len()), d_atoms).expect("shape");
        let (_, dx) = critic.backward(&tape, &d_out)?;
        let analytic = dx[[0, features.len()]];
        let eps = 1e-6;
        let up = agent.q_value(&features, &[action[0] + eps])?;
        let down = agent.q_value(&features, &[action[0] - eps])?;
        worst = worst.max(rel_err((up - down) / (2.0 * eps), analytic));
        done += 1;
    }
    Ok(worst)
}

/// Norm-relative error of the full actor gradient (TD3-SRM and TD3BC-SRM)
/// with frozen critics.
fn actor_objective_worst(instances: usize, rng: &mut SimRng) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let specs = spectra();
    for k in 0..instances {
        let alg = if k % 2 == 0 { Algorithm::Td3Srm } else { Algorithm::Td3bcSrm };
        let spec = &specs[k % specs.len()];
        let mut agent = small_agent(alg, &spec.to_string(), rng.random())?;
        agent.set_h(random_h(spec, rng)?);
        let records = random_records(6, rng);
        let batch: Vec<&TransitionRecord> = records.iter().collect();
        let (_, grads) = agent.deterministic_actor_gradient(&batch)?;
        let g = grads.flat();
        let p = agent.actor().net.params();
        let eps = 1e-6;
        let mut diff = 0.0;
        let mut norm = 0.0;
        for (i, gi) in g.iter().enumerate() {
            let mut probe = agent.clone();
            let mut q = p.clone();
            q[i] += eps;
            probe.actor_mut().net.set_params(&q)?;
            let up = probe.deterministic_objective(&batch)?;
            q[i] -= 2.0 * eps;
            probe.actor_mut().net.set_params(&q)?;
            let down = probe.deterministic_objective(&batch)?;
            let fd = (up - down) / (2.0 * eps);
            diff += (fd - gi).powi(2);
            norm += fd * fd;
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(1e-8));
    }
    Ok(worst)
}

pub fn check_gradients(scale: Scale) -> CheckOutcome {
    let n = if scale == Scale::Full { 100 } else { 20 };
    timed(7, "gradient suite vs finite differences", Some(60.0), || {
        let mut rng = seeded_rng(7);
        let parts = [
            ("huber", huber_worst(n, &mut rng)?, 1e-4),
            ("mlp", mlp_worst(n, &mut rng)?, 1e-4),
            ("log-prob", log_prob_worst(n, &mut rng)?, 1e-4),
            ("h-chain", chain_worst(n, &mut rng)?, 1e-4),
            ("actor objective", actor_objective_worst(n, &mut rng)?, 1e-3),
        ];
        let ok = parts.iter().all(|(_, e, tol)| e <= tol);
        let detail = parts
            .iter()
            .map(|(name, e, tol)| format!("{name} {e:.1e} (<= {tol:.0e})"))
            .collect::<Vec<_>>()
            .join(", ");
        Ok((ok, format!("{n} instances each: {detail}")))
    })
}

// ---------------------------------------------------------------------------
// neural trend and end-to-end runs

/// Desk-scale TD3-SRM settings for the trading trend check.
pub fn trend_agent_config() -> AgentConfig {
    AgentConfig {
        algorithm: Algorithm::Td3Srm,
        hidden: vec![64, 64],
        batch_size: 64,
        quantiles: 32,
        lr: 1e-3,
        warmup_steps: 5000,
        ..AgentConfig::default()
    }
}

pub struct TrendResult {
    pub cvar_returns: Vec<f64>,
    pub neutral_returns: Vec<f64>,
}

/// Trains TD3-SRM with `cvar:0.2` and `neutral` on the trading env and
/// pools the evaluation returns of all seeds.
pub fn trading_trend(seeds: &[u64], steps: usize, episodes: usize) -> Result<TrendResult> {
    let run = |spectrum: &str| -> Result<Vec<f64>> {
        let mut cfg = ExperimentConfig {
            name: format!("trend-{spectrum}"),
            env: EnvConfig::Trading(TradingConfig::default()),
            spectrum: spectrum.parse()?,
            agent: trend_agent_config(),
            seeds: seeds.to_vec(),
            train_steps: steps,
            eval_episodes: episodes,
            ..ExperimentConfig::default()
        };
        let dir = scratch_dir(&cfg.name);
        cfg.output_dir = dir.clone();
        let out = experiment::run_online(&cfg);
        let _ = std::fs::remove_dir_all(&dir);
        Ok(out?.report.report.returns.concat())
    };
    Ok(TrendResult {
        cvar_returns: run("cvar:0.2")?,
        neutral_returns: run("neutral")?,
    })
}

fn scratch_dir(tag: &str) -> PathBuf {
    static COUNTER: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);
    let k = COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    std::env::temp_dir().join(format!("srm-selftest-{}-{k}-{tag}", std::process::id()))
}

pub fn check_risk_trend(scale: Scale) -> CheckOutcome {
    let bandit = || -> Result<(bool, String)> {
        let ext = ExtendedMdp::new(fixtures::bandit())?;
        let cvar = tabular::bilevel_train(&ext, &RiskSpectrum::cvar(0.5)?, &BilevelConfig::default())?;
        let neutral = tabular::bilevel_train(&ext, &RiskSpectrum::neutral(), &BilevelConfig::default())?;
        let safe = tabular::initial_action_prob(&ext, &cvar.policy, 1);
        let risky = tabular::initial_action_prob(&ext, &neutral.policy, 0);
        Ok((
            safe >= 0.99 && risky >= 0.99,
            format!("bandit P(safe | cvar:0.5) {safe:.4}, P(risky | neutral) {risky:.4}"),
        ))
    };
    if scale == Scale::Quick {
        return timed(8, "risk/return trend (bandit only)", None, bandit);
    }
    timed(8, "risk/return trend", Some(1800.0), || {
        let (bandit_ok, bandit_detail) = bandit()?;
        let trend = trading_trend(&[0, 1, 2], 50_000, 1000)?;
        let cvar_tail = empirical_cvar(&trend.cvar_returns, 0.2)?;
        let neutral_tail = empirical_cvar(&trend.neutral_returns, 0.2)?;
        let r = TRADING_REFERENCE;
        let cvar_mean = normalized_score(mean(&trend.cvar_returns), r.random, r.expert)?;
        let neutral_mean = normalized_score(mean(&trend.neutral_returns), r.random, r.expert)?;
        let tail_ok = cvar_tail >= neutral_tail;
        let mean_ok = neutral_mean >= cvar_mean - 1.0;
        Ok((
            bandit_ok && tail_ok && mean_ok,
            format!(
                "{bandit_detail}; trading CVaR_0.2 cvar {cvar_tail:.3} vs neutral {neutral_tail:.3}, \
                 normalized mean neutral {neutral_mean:.1} vs cvar {cvar_mean:.1} (slack 1 point)"
            ),
        ))
    })
}

pub fn check_metric_constants() -> CheckOutcome {
    timed(9, "normalized score constants", None, || {
        let r = TRADING_REFERENCE;
        let zero = normalized_score(-6.17, r.random, r.expert)?;
        let hundred = normalized_score(1.72, r.random, r.expert)?;
        Ok((zero == 0.0 && hundred == 100.0, format!("-6.17 -> {zero}, 1.72 -> {hundred}")))
    })
}

/// Generate -> save -> load -> TD3BC-SRM; returns the metrics CSV bytes.
pub fn offline_pipeline(train_steps: usize, dataset_steps: usize, episodes: usize) -> Result<Vec<u8>> {
    let dir = scratch_dir("offline");
    let mut cfg = ExperimentConfig {
        name: "offline".into(),
        spectrum: "cvar:0.2".parse()?,
        agent: AgentConfig {
            algorithm: Algorithm::Td3bcSrm,
            ..trend_agent_config()
        },
        seeds: vec![0],
        train_steps,
        eval_episodes: episodes,
        output_dir: dir.join("run"),
        ..ExperimentConfig::default()
    };
    cfg.dataset.path = dir.join("expert_replay.csv");
    cfg.dataset.source = DatasetSource::ExpertReplay;
    cfg.dataset.steps = dataset_steps;
    let result = (|| -> Result<Vec<u8>> {
        experiment::generate(&cfg)?;
        experiment::run_offline(&cfg)?;
        Ok(std::fs::read(cfg.output_dir.join(experiment::METRICS_FILE))?)
    })();
    let _ = std::fs::remove_dir_all(&dir);
    result
}

pub fn check_offline_round_trip(scale: Scale) -> CheckOutcome {
    let (train, data, episodes) = if scale == Scale::Full { (5000, 10_000, 200) } else { (500, 2000, 20) };
    timed(10, "offline round trip determinism", Some(300.0), || {
        let a = offline_pipeline(train, data, episodes)?;
        let b = offline_pipeline(train, data, episodes)?;
        Ok((
            a == b,
            format!("{train} TD3BC-SRM steps on a {data}-record expert-replay dataset, metrics CSV identical: {}", a == b),
        ))
    })
}

/// Every check in criterion order.
pub fn run(scale: Scale) -> Vec<CheckOutcome> {
    vec![
        check_discretisation(scale),
        check_cvar_identity(),
        check_bilevel_monotone(),
        check_npg_optimality(),
        check_perf_diff(),
        check_quantile_condition(),
        check_gradients(scale),
        check_risk_trend(scale),
        check_metric_constants(),
        check_offline_round_trip(scale),
    ]
}
