//! Exact bi-level optimisation on small finite-horizon MDPs.
//!
//! Reachable extended states `(x, s, c)` are enumerated exactly, return laws
//! are obtained by walking every trajectory, and the inner loop is natural
//! policy gradient with softmax logits, which for this parameterisation adds
//! `eta / (1 - gamma) * A_h` to the logits. Everything here is exact up to
//! floating point, which makes the monotone-improvement and
//! performance-difference identities testable to ~1e-10.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::env::TabularMdp;
use crate::error::{Result, SrmError};
use crate::quantile::QuantileDistribution;
use crate::risk_fn::PiecewiseLinearH;
use crate::spectrum::RiskSpectrum;

/// Trajectory budget for brute-force enumeration.
pub const MAX_PATHS: u128 = 10_000_000;

/// Cap on reachable extended decision states.
pub const MAX_NODES: usize = 1_000_000;

/// Number of quantiles used when the outer loop refreshes `h`.
pub const DEFAULT_QUANTILES: usize = 50;

/// Values closer than this are merged in a return law.
const VALUE_TOL: f64 = 1e-12;

/// A finite law as `(value, probability)` pairs sorted by value.
pub type Law = Vec<(f64, f64)>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Successor {
    pub prob: f64,
    pub reward: f64,
    /// Next decision state; `None` once the horizon is reached.
    pub next: Option<usize>,
}

/// A reachable decision state of the extended MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedNode {
    pub x: usize,
    pub s: f64,
    pub c: f64,
    pub t: usize,
    /// `successors[a]`: outcomes of taking action `a`.
    pub successors: Vec<Vec<Successor>>,
}

/// The extended-state MDP `(x, s, c)` reachable from the initial law.
#[derive(Debug, Clone)]
pub struct ExtendedMdp {
    mdp: TabularMdp,
    nodes: Vec<ExtendedNode>,
    initial: Vec<(usize, f64)>,
}

fn state_key(t: usize, x: usize, s: f64) -> (usize, usize, i64) {
    (t, x, (s * 1e9).round() as i64)
}

impl ExtendedMdp {
    pub fn new(mdp: TabularMdp) -> Result<Self> {
        mdp.validate()?;
        let mut nodes: Vec<ExtendedNode> = Vec::new();
        let mut index: HashMap<(usize, usize, i64), usize> = HashMap::new();
        let mut initial = Vec::new();
        for (x, &p) in mdp.xi0.iter().enumerate() {
            if p > 0.0 {
                let id = nodes.len();
                index.insert(state_key(0, x, 0.0), id);
                nodes.push(ExtendedNode {
                    x,
                    s: 0.0,
                    c: 1.0,
                    t: 0,
                    successors: Vec::new(),
                });
                initial.push((id, p));
            }
        }
        // nodes are appended level by level, so a single forward sweep works
        let mut cursor = 0;
        while cursor < nodes.len() {
            let ExtendedNode { x, s, c, t, .. } = nodes[cursor].clone();
            let mut per_action = Vec::with_capacity(mdp.num_actions);
            for a in 0..mdp.num_actions {
                let mut outcomes = Vec::new();
                for reward in &mdp.rewards[x][a] {
                    if reward.prob <= 0.0 {
                        continue;
                    }
                    for (y, &py) in mdp.transitions[x][a].iter().enumerate() {
                        if py <= 0.0 {
                            continue;
                        }
                        let next = if t + 1 >= mdp.horizon {
                            None
                        } else {
                            let s_next = s + c * reward.value;
                            let key = state_key(t + 1, y, s_next);
                            let id = *index.entry(key).or_insert_with(|| {
                                nodes.push(ExtendedNode {
                                    x: y,
                                    s: s_next,
                                    c: c * mdp.gamma,
                                    t: t + 1,
                                    successors: Vec::new(),
                                });
                                nodes.len() - 1
                            });
                            Some(id)
                        };
                        outcomes.push(Successor {
                            prob: reward.prob * py,
                            reward: reward.value,
                            next,
                        });
                    }
                }
                per_action.push(outcomes);
            }
            nodes[cursor].successors = per_action;
            cursor += 1;
            if nodes.len() > MAX_NODES {
                return Err(SrmError::Size {
                    paths: nodes.len() as u128,
                    limit: MAX_NODES as u128,
                });
            }
        }
        Ok(ExtendedMdp {
            mdp,
            nodes,
            initial,
        })
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn nodes(&self) -> &[ExtendedNode] {
        &self.nodes
    }

    pub fn initial(&self) -> &[(usize, f64)] {
        &self.initial
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_actions(&self) -> usize {
        self.mdp.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.mdp.gamma
    }

    /// Number of distinct trajectories (over all actions and outcomes)
    /// starting from the initial states.
    pub fn path_count(&self) -> u128 {
        let mut memo = vec![0u128; self.nodes.len()];
        for id in (0..self.nodes.len()).rev() {
            memo[id] = self.nodes[id]
                .successors
                .iter()
                .flatten()
                .map(|succ| succ.next.map_or(1, |n| memo[n]))
                .fold(0u128, |acc, v| acc.saturating_add(v));
        }
        self.initial.iter().map(|(id, _)| memo[*id]).sum()
    }
}

/// Softmax policy over extended decision states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub logits: Vec<Vec<f64>>,
}

impl SoftmaxPolicy {
    pub fn uniform(ext: &ExtendedMdp) -> Self {
        SoftmaxPolicy {
            logits: vec![vec![0.0; ext.num_actions()]; ext.num_nodes()],
        }
    }

    /// Deterministic policy as the limit of very peaked logits.
    pub fn deterministic(ext: &ExtendedMdp, actions: &[usize]) -> Self {
        let mut logits = vec![vec![f64::NEG_INFINITY; ext.num_actions()]; ext.num_nodes()];
        for (row, &a) in logits.iter_mut().zip(actions) {
            row[a] = 0.0;
        }
        SoftmaxPolicy { logits }
    }

    pub fn probs(&self, node: usize) -> Vec<f64> {
        softmax(&self.logits[node])
    }

    pub fn max_abs_logit(&self) -> f64 {
        self.logits
            .iter()
            .flatten()
            .filter(|v| v.is_finite())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Exact law of the return under a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactReturnLaw {
    /// Law of `G^pi` from the initial distribution.
    pub initial: Law,
    /// `state_action[node][a]`: law of the return collected from `node`
    /// onward (discounted to that node) when taking `a` first.
    pub state_action: Vec<Vec<Law>>,
}

fn merge_law(mut outcomes: Vec<(f64, f64)>) -> Law {
    outcomes.retain(|(_, p)| *p > 0.0);
    outcomes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Law = Vec::with_capacity(outcomes.len());
    for (v, p) in outcomes {
        match merged.last_mut() {
            Some(last) if (v - last.0).abs() <= VALUE_TOL * (1.0 + v.abs()) => last.1 += p,
            _ => merged.push((v, p)),
        }
    }
    merged
}

/// Walks every trajectory from `node` (taking `first` if given, then the
/// policy) and records `(local discounted return, probability)`.
#[allow(clippy::too_many_arguments)]
fn walk(
    ext: &ExtendedMdp,
    policy: &SoftmaxPolicy,
    node: usize,
    first: Option<usize>,
    acc_return: f64,
    discount: f64,
    prob: f64,
    out: &mut Vec<(f64, f64)>,
) {
    let gamma = ext.gamma();
    let probs = policy.probs(node);
    for (a, &pa) in probs.iter().enumerate() {
        let pa = match first {
            Some(f) => {
                if f == a {
                    1.0
                } else {
                    0.0
                }
            }
            None => pa,
        };
        if pa <= 0.0 {
            continue;
        }
        for succ in &ext.nodes[node].successors[a] {
            let p = prob * pa * succ.prob;
            let g = acc_return + discount * succ.reward;
            match succ.next {
                Some(next) => walk(ext, policy, next, None, g, discount * gamma, p, out),
                None => out.push((g, p)),
            }
        }
    }
}

/// Brute-force return laws by trajectory enumeration.
pub fn exact_return_distribution(
    ext: &ExtendedMdp,
    policy: &SoftmaxPolicy,
) -> Result<ExactReturnLaw> {
    let paths = ext.path_count();
    if paths > MAX_PATHS {
        return Err(SrmError::Size {
            paths,
            limit: MAX_PATHS,
        });
    }
    let mut initial = Vec::new();
    for &(node, p) in ext.initial() {
        walk(ext, policy, node, None, 0.0, 1.0, p, &mut initial);
    }
    let state_action = (0..ext.num_nodes())
        .map(|node| {
            (0..ext.num_actions())
                .map(|a| {
                    let mut out = Vec::new();
                    walk(ext, policy, node, Some(a), 0.0, 1.0, 1.0, &mut out);
                    merge_law(out)
                })
                .collect()
        })
        .collect();
    Ok(ExactReturnLaw {
        initial: merge_law(initial),
        state_action,
    })
}

/// Exact spectral risk of a finite law.
pub fn law_srm(spectrum: &RiskSpectrum, law: &[(f64, f64)]) -> f64 {
    let mut sorted = law.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cum = 0.0;
    let mut prev_g = 0.0;
    let mut total = 0.0;
    for (v, p) in sorted {
        cum += p;
        let g = spectrum.cumulative(cum.min(1.0));
        total += v * (g - prev_g);
        prev_g = g;
    }
    total
}

pub fn law_mean(law: &[(f64, f64)]) -> f64 {
    law.iter().map(|(v, p)| v * p).sum()
}

/// Right-continuous CDF of a finite law and its left limit at `z`.
pub fn law_cdf(law: &[(f64, f64)], z: f64) -> (f64, f64) {
    let below: f64 = law.iter().filter(|(v, _)| *v < z).map(|(_, p)| p).sum();
    let at_or_below: f64 = law.iter().filter(|(v, _)| *v <= z).map(|(_, p)| p).sum();
    (below, at_or_below)
}

/// `J(pi, h) = E[h(G^pi)]`.
pub fn objective(law: &ExactReturnLaw, h: &PiecewiseLinearH) -> f64 {
    h.expect_law(&law.initial)
}

/// The outer-loop `h` for a return law: built from its `n` quantiles.
pub fn h_for_law(spectrum: &RiskSpectrum, law: &[(f64, f64)], n: usize) -> Result<PiecewiseLinearH> {
    let q = QuantileDistribution::from_weighted_law(law, n)?;
    Ok(PiecewiseLinearH::build(spectrum, &q))
}

/// Discretised spectral objective `max_h E[h(G)] = E[h_G(G)]`, the quantity
/// the bi-level scheme improves monotonically.
pub fn discretised_srm(spectrum: &RiskSpectrum, law: &[(f64, f64)], n: usize) -> Result<f64> {
    Ok(h_for_law(spectrum, law, n)?.expect_law(law))
}

/// Risk-adjusted Q-values `E[h(s + c G(x,a))] / c` for every node.
pub fn q_table(ext: &ExtendedMdp, law: &ExactReturnLaw, h: &PiecewiseLinearH) -> Vec<Vec<f64>> {
    ext.nodes()
        .iter()
        .zip(&law.state_action)
        .map(|(node, laws)| {
            laws.iter()
                .map(|l| l.iter().map(|&(g, p)| p * h.eval(node.s + node.c * g)).sum::<f64>() / node.c)
                .collect()
        })
        .collect()
}

/// `A_h(x, a) = Q_h(x, a) - Σ_b pi(b|x) Q_h(x, b)`.
pub fn exact_advantage(
    ext: &ExtendedMdp,
    policy: &SoftmaxPolicy,
    law: &ExactReturnLaw,
    h: &PiecewiseLinearH,
) -> Vec<Vec<f64>> {
    q_table(ext, law, h)
        .into_iter()
        .enumerate()
        .map(|(node, q)| {
            let probs = policy.probs(node);
            let v: f64 = probs.iter().zip(&q).map(|(p, q)| p * q).sum();
            q.into_iter().map(|q| q - v).collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    Constant(f64),
    /// `eta_t = eta0 / (1 + t / 1000)`: `Σ eta = ∞`, `Σ eta² < ∞`.
    RobbinsMonro(f64),
}

impl StepSchedule {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant(eta) => eta,
            StepSchedule::RobbinsMonro(eta0) => eta0 / (1.0 + t as f64 / 1000.0),
        }
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Constant(0.5)
    }
}

const LOGIT_LIMIT: f64 = 1e6;
/// Slack on the per-step improvement check (floating point only).
pub const IMPROVEMENT_TOL: f64 = 1e-10;

/// Natural policy gradient steps for a fixed `h`. Returns the final policy
/// and `J(pi_t, h)` for `t = 0..=iterations`.
pub fn npg_inner_loop(
    ext: &ExtendedMdp,
    policy: &SoftmaxPolicy,
    h: &PiecewiseLinearH,
    schedule: StepSchedule,
    iterations: usize,
) -> Result<(SoftmaxPolicy, Vec<f64>)> {
    let mut policy = policy.clone();
    let scale = 1.0 / (1.0 - ext.gamma());
    let mut law = exact_return_distribution(ext, &policy)?;
    let mut history = vec![objective(&law, h)];
    for t in 0..iterations {
        let adv = exact_advantage(ext, &policy, &law, h);
        let eta = schedule.at(t);
        for (row, a_row) in policy.logits.iter_mut().zip(&adv) {
            for (theta, a) in row.iter_mut().zip(a_row) {
                *theta += eta * scale * a;
            }
        }
        if policy.max_abs_logit() > LOGIT_LIMIT {
            return Err(SrmError::Instability(format!(
                "softmax logits exceeded {LOGIT_LIMIT:e} at inner step {t}"
            )));
        }
        law = exact_return_distribution(ext, &policy)?;
        let j = objective(&law, h);
        let prev = *history.last().expect("non-empty");
        if j < prev - IMPROVEMENT_TOL * (1.0 + prev.abs()) {
            return Err(SrmError::Instability(format!(
                "inner objective decreased from {prev} to {j} at step {t}"
            )));
        }
        history.push(j);
    }
    Ok((policy, history))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BilevelConfig {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub schedule: StepSchedule,
    pub quantiles: usize,
}

impl Default for BilevelConfig {
    fn default() -> Self {
        BilevelConfig {
            outer_iterations: 20,
            inner_iterations: 50,
            schedule: StepSchedule::default(),
            quantiles: DEFAULT_QUANTILES,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BilevelResult {
    pub policy: SoftmaxPolicy,
    /// Discretised objective `E[h_k(G^{pi_k})]` with `h_k` built from
    /// `G^{pi_k}`; index 0 is the initial policy.
    pub objective_history: Vec<f64>,
    /// Exact spectral risk of `G^{pi_k}`.
    pub srm_history: Vec<f64>,
    /// The `h` used by the last inner loop.
    pub last_h: PiecewiseLinearH,
    pub final_law: ExactReturnLaw,
}

/// Alternates the closed-form `h` refresh with NPG inner loops, starting
/// from the uniform policy.
pub fn bilevel_train(
    ext: &ExtendedMdp,
    spectrum: &RiskSpectrum,
    cfg: &BilevelConfig,
) -> Result<BilevelResult> {
    bilevel_train_from(ext, spectrum, cfg, SoftmaxPolicy::uniform(ext))
}

pub fn bilevel_train_from(
    ext: &ExtendedMdp,
    spectrum: &RiskSpectrum,
    cfg: &BilevelConfig,
    start: SoftmaxPolicy,
) -> Result<BilevelResult> {
    let mut policy = start;
    let mut law = exact_return_distribution(ext, &policy)?;
    let mut objective_history = vec![discretised_srm(spectrum, &law.initial, cfg.quantiles)?];
    let mut srm_history = vec![law_srm(spectrum, &law.initial)];
    let mut last_h = h_for_law(spectrum, &law.initial, cfg.quantiles)?;
    for _ in 0..cfg.outer_iterations {
        let h = h_for_law(spectrum, &law.initial, cfg.quantiles)?;
        let (next, _) = npg_inner_loop(ext, &policy, &h, cfg.schedule, cfg.inner_iterations)?;
        policy = next;
        law = exact_return_distribution(ext, &policy)?;
        objective_history.push(discretised_srm(spectrum, &law.initial, cfg.quantiles)?);
        srm_history.push(law_srm(spectrum, &law.initial));
        last_h = h;
    }
    Ok(BilevelResult {
        policy,
        objective_history,
        srm_history,
        last_h,
        final_law: law,
    })
}

/// Probability that the state's decision is action `a`, averaged over the
/// initial states.
pub fn initial_action_prob(ext: &ExtendedMdp, policy: &SoftmaxPolicy, a: usize) -> f64 {
    ext.initial()
        .iter()
        .map(|&(node, p)| p * policy.probs(node)[a])
        .sum()
}

/// `P_pi(x_t = node)` for every decision node.
pub fn occupancy(ext: &ExtendedMdp, policy: &SoftmaxPolicy) -> Vec<f64> {
    let mut occ = vec![0.0; ext.num_nodes()];
    for &(node, p) in ext.initial() {
        occ[node] += p;
    }
    // successors always have larger indices
    for node in 0..ext.num_nodes() {
        let mass = occ[node];
        if mass == 0.0 {
            continue;
        }
        let probs = policy.probs(node);
        for (a, pa) in probs.iter().enumerate() {
            for succ in &ext.nodes()[node].successors[a] {
                if let Some(next) = succ.next {
                    occ[next] += mass * pa * succ.prob;
                }
            }
        }
    }
    occ
}

/// Both sides of the risk-sensitive performance-difference identity:
/// `J(pi', h) - J(pi, h)` and `E_{d^{pi'}, pi'}[A_h^pi] / (1 - gamma)`,
/// the latter as `Σ_t gamma^t E_{pi'}[A_h^pi(x_t, a_t)]`.
pub fn perf_diff_check(
    ext: &ExtendedMdp,
    pi: &SoftmaxPolicy,
    pi_new: &SoftmaxPolicy,
    h: &PiecewiseLinearH,
) -> Result<(f64, f64)> {
    let law = exact_return_distribution(ext, pi)?;
    let law_new = exact_return_distribution(ext, pi_new)?;
    let lhs = objective(&law_new, h) - objective(&law, h);
    let adv = exact_advantage(ext, pi, &law, h);
    let occ = occupancy(ext, pi_new);
    let rhs = ext
        .nodes()
        .iter()
        .enumerate()
        .map(|(id, node)| {
            let probs = pi_new.probs(id);
            let expected: f64 = probs.iter().zip(&adv[id]).map(|(p, a)| p * a).sum();
            occ[id] * node.c * expected
        })
        .sum();
    Ok((lhs, rhs))
}

/// Breakpoints `q_i` with `w_i > 0` that are not `tau_hat_i`-quantiles of
/// `law`, i.e. violate `F(q_i-) <= tau_hat_i <= F(q_i)`.
pub fn quantile_condition_violations(h: &PiecewiseLinearH, law: &[(f64, f64)], tol: f64) -> Vec<usize> {
    h.breakpoints()
        .iter()
        .zip(h.weights())
        .zip(h.levels())
        .enumerate()
        .filter(|(_, ((&q, &w), &tau))| {
            if w <= 0.0 {
                return false;
            }
            let (left, right) = law_cdf(law, q);
            !(left <= tau + tol && tau <= right + tol)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Verification oracles independent of the NPG machinery.
pub mod oracle {
    use super::*;

    /// Best `J(pi, h)` over all deterministic extended-state policies, by
    /// exhaustive enumeration. Ties resolve to the lower action index.
    pub fn best_deterministic(ext: &ExtendedMdp, h: &PiecewiseLinearH) -> Result<(f64, Vec<usize>)> {
        let n = ext.num_nodes();
        let k = ext.num_actions();
        let total = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
        if total > MAX_PATHS {
            return Err(SrmError::Size {
                paths: total,
                limit: MAX_PATHS,
            });
        }
        let mut best = (f64::NEG_INFINITY, vec![0; n]);
        let mut actions = vec![0usize; n];
        for code in 0..total {
            let mut c = code;
            // node 0 is the most significant digit so lower indices win ties
            for slot in actions.iter_mut().rev() {
                *slot = (c % k as u128) as usize;
                c /= k as u128;
            }
            let law = deterministic_law(ext, &actions);
            let j = h.expect_law(&law);
            if j > best.0 + 1e-12 {
                best = (j, actions.clone());
            }
        }
        Ok(best)
    }

    /// Law of `G` under a deterministic extended-state policy, by direct
    /// enumeration (no softmax involved).
    pub fn deterministic_law(ext: &ExtendedMdp, actions: &[usize]) -> Law {
        fn go(ext: &ExtendedMdp, actions: &[usize], node: usize, g: f64, d: f64, p: f64, out: &mut Law) {
            for succ in &ext.nodes()[node].successors[actions[node]] {
                let value = g + d * succ.reward;
                match succ.next {
                    Some(n) => go(ext, actions, n, value, d * ext.gamma(), p * succ.prob, out),
                    None => out.push((value, p * succ.prob)),
                }
            }
        }
        let mut out = Vec::new();
        for &(node, p) in ext.initial() {
            go(ext, actions, node, 0.0, 1.0, p, &mut out);
        }
        merge_law(out)
    }

    /// Optimal expected return by finite-horizon value iteration on the base
    /// MDP.
    pub fn value_iteration(mdp: &TabularMdp) -> f64 {
        let mut v = vec![0.0; mdp.num_states];
        for _ in 0..mdp.horizon {
            v = (0..mdp.num_states)
                .map(|x| {
                    (0..mdp.num_actions)
                        .map(|a| {
                            let r: f64 = mdp.rewards[x][a].iter().map(|o| o.value * o.prob).sum();
                            let next: f64 = mdp.transitions[x][a]
                                .iter()
                                .zip(&v)
                                .map(|(p, v)| p * v)
                                .sum();
                            r + mdp.gamma * next
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
        }
        mdp.xi0.iter().zip(&v).map(|(p, v)| p * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::fixtures;

    fn ext(mdp: TabularMdp) -> ExtendedMdp {
        ExtendedMdp::new(mdp).unwrap()
    }

    fn close_law(a: &[(f64, f64)], b: &[(f64, f64)]) -> bool {
        a.len() == b.len()
            && a.iter()
                .zip(b)
                .all(|(x, y)| (x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12)
    }

    #[test]
    fn return_law_examples() {
        let chain = ext(fixtures::deterministic_chain());
        let law = exact_return_distribution(&chain, &SoftmaxPolicy::uniform(&chain)).unwrap();
        assert!(close_law(&law.initial, &[(1.5, 1.0)]));

        let bandit = ext(fixtures::bandit());
        let risky = SoftmaxPolicy::deterministic(&bandit, &[0]);
        let law = exact_return_distribution(&bandit, &risky).unwrap();
        assert!(close_law(&law.initial, &[(0.0, 0.5), (2.0, 0.5)]));
        let law = exact_return_distribution(&bandit, &SoftmaxPolicy::uniform(&bandit)).unwrap();
        assert!(close_law(&law.initial, &[(0.0, 0.25), (0.9, 0.5), (2.0, 0.25)]));
        let total: f64 = law.initial.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn three_state_extended_states() {
        let e = ext(fixtures::three_state());
        // x0; x1 with s in {0, 0.5, 0.2}; x2 with s = 0
        assert_eq!(e.num_nodes(), 5);
        assert_eq!(e.num_actions().pow(e.num_nodes() as u32), 32);
    }

    #[test]
    fn enumeration_guard() {
        // rewards collapse to one node per step, but trajectories multiply by 4
        let r = |v: f64, p: f64| crate::env::RewardOutcome { value: v, prob: p };
        let mdp = TabularMdp {
            num_states: 1,
            num_actions: 2,
            gamma: 0.9,
            horizon: 12,
            xi0: vec![1.0],
            transitions: vec![vec![vec![1.0], vec![1.0]]],
            rewards: vec![vec![vec![r(0.0, 0.5), r(0.0, 0.5)], vec![r(0.0, 0.5), r(0.0, 0.5)]]],
        };
        let e = ext(mdp);
        assert_eq!(e.num_nodes(), 12);
        assert_eq!(e.path_count(), 4u128.pow(12));
        let err = exact_return_distribution(&e, &SoftmaxPolicy::uniform(&e)).unwrap_err();
        assert!(matches!(err, SrmError::Size { .. }));

        let mut mdp = fixtures::three_state();
        mdp.horizon = 14;
        assert!(matches!(ExtendedMdp::new(mdp), Err(SrmError::Size { .. })));
    }

    #[test]
    fn advantage_examples() {
        let chain = ext(fixtures::deterministic_chain());
        let pol = SoftmaxPolicy::uniform(&chain);
        let law = exact_return_distribution(&chain, &pol).unwrap();
        let h = h_for_law(&RiskSpectrum::cvar(0.5).unwrap(), &law.initial, 50).unwrap();
        for row in exact_advantage(&chain, &pol, &law, &h) {
            assert!(row.iter().all(|a| a.abs() < 1e-12));
        }

        let bandit = ext(fixtures::bandit());
        let pol = SoftmaxPolicy {
            logits: vec![vec![0.3, -0.2]],
        };
        let law = exact_return_distribution(&bandit, &pol).unwrap();
        let uniform_law = exact_return_distribution(&bandit, &SoftmaxPolicy::uniform(&bandit)).unwrap();
        let h = h_for_law(&RiskSpectrum::neutral(), &uniform_law.initial, 50).unwrap();
        let adv = exact_advantage(&bandit, &pol, &law, &h);
        let p = pol.probs(0);
        let v = p[0] * 1.0 + p[1] * 0.9;
        assert!((adv[0][0] - (1.0 - v)).abs() < 1e-12);
        assert!((adv[0][1] - (0.9 - v)).abs() < 1e-12);
        let weighted: f64 = p.iter().zip(&adv[0]).map(|(p, a)| p * a).sum();
        assert!(weighted.abs() < 1e-10);
    }

    #[test]
    fn advantage_is_bounded_by_lipschitz_range() {
        let e = ext(fixtures::three_state());
        let pol = SoftmaxPolicy {
            logits: (0..e.num_nodes()).map(|i| vec![0.1 * i as f64, -0.3]).collect(),
        };
        let law = exact_return_distribution(&e, &pol).unwrap();
        for spec in ["cvar:0.3", "neutral", "exp:2", "mc:0.2,0.4"] {
            let spec: RiskSpectrum = spec.parse().unwrap();
            let h = h_for_law(&spec, &law.initial, 50).unwrap();
            let bound = h.max_slope() * {
                let lo = law.state_action.iter().flatten().flatten().map(|x| x.0).fold(f64::INFINITY, f64::min);
                let hi = law.state_action.iter().flatten().flatten().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            };
            for row in exact_advantage(&e, &pol, &law, &h) {
                for a in row {
                    assert!(a.abs() <= bound + 1e-12, "{spec}: {a} > {bound}");
                }
            }
        }
    }

    #[test]
    fn npg_examples() {
        // zero advantage leaves logits untouched
        let chain = ext(fixtures::deterministic_chain());
        let pol = SoftmaxPolicy::uniform(&chain);
        let law = exact_return_distribution(&chain, &pol).unwrap();
        let h = h_for_law(&RiskSpectrum::neutral(), &law.initial, 50).unwrap();
        let (next, hist) = npg_inner_loop(&chain, &pol, &h, StepSchedule::Constant(0.5), 3).unwrap();
        assert_eq!(next, pol);
        assert!(hist.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn npg_logit_step_scaling() {
        // A = (1, -1), eta = 0.1, gamma = 0.9: delta theta = (1, -1)
        let eta = 0.1;
        let gamma = 0.9;
        let adv = [1.0, -1.0];
        let delta: Vec<f64> = adv.iter().map(|a| eta / (1.0 - gamma) * a).collect();
        assert!((delta[0] - 1.0).abs() < 1e-12 && (delta[1] + 1.0).abs() < 1e-12);

        // same step through the implementation on a bandit with A = (0.05, -0.05)
        let bandit = ext(fixtures::bandit());
        let pol = SoftmaxPolicy::uniform(&bandit);
        let law = exact_return_distribution(&bandit, &pol).unwrap();
        let h = h_for_law(&RiskSpectrum::neutral(), &law.initial, 50).unwrap();
        let adv = exact_advantage(&bandit, &pol, &law, &h);
        let (next, _) = npg_inner_loop(&bandit, &pol, &h, StepSchedule::Constant(eta), 1).unwrap();
        for (a, g) in adv[0].iter().enumerate() {
            assert!((next.logits[0][a] - eta / (1.0 - gamma) * g).abs() < 1e-12);
        }
    }

    #[test]
    fn bandit_inner_loop_picks_by_risk() {
        let bandit = ext(fixtures::bandit());
        let uniform = SoftmaxPolicy::uniform(&bandit);
        let law = exact_return_distribution(&bandit, &uniform).unwrap();
        let cvar = h_for_law(&RiskSpectrum::cvar(0.5).unwrap(), &law.initial, 50).unwrap();
        let (pol, _) = npg_inner_loop(&bandit, &uniform, &cvar, StepSchedule::Constant(0.5), 200).unwrap();
        assert!(pol.probs(0)[1] > 0.99);
        let neutral = h_for_law(&RiskSpectrum::neutral(), &law.initial, 50).unwrap();
        let (pol, _) = npg_inner_loop(&bandit, &uniform, &neutral, StepSchedule::Constant(0.5), 200).unwrap();
        assert!(pol.probs(0)[0] > 0.99);
    }

    #[test]
    fn single_policy_mdp_has_constant_history() {
        let chain = ext(fixtures::deterministic_chain());
        let res = bilevel_train(&chain, &RiskSpectrum::cvar(0.3).unwrap(), &BilevelConfig {
            outer_iterations: 5,
            ..BilevelConfig::default()
        })
        .unwrap();
        assert!(res.objective_history.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn perf_diff_examples() {
        let bandit = ext(fixtures::bandit());
        let risky = SoftmaxPolicy::deterministic(&bandit, &[0]);
        let safe = SoftmaxPolicy::deterministic(&bandit, &[1]);
        let law = exact_return_distribution(&bandit, &SoftmaxPolicy::uniform(&bandit)).unwrap();
        let h = h_for_law(&RiskSpectrum::neutral(), &law.initial, 50).unwrap();
        let (lhs, rhs) = perf_diff_check(&bandit, &risky, &safe, &h).unwrap();
        assert!((lhs + 0.1).abs() < 1e-12 && (rhs + 0.1).abs() < 1e-12, "{lhs} {rhs}");
        let (lhs, rhs) = perf_diff_check(&bandit, &risky, &risky, &h).unwrap();
        assert_eq!((lhs, rhs), (0.0, 0.0));
    }

    #[test]
    fn value_iteration_on_three_state() {
        assert!((oracle::value_iteration(&fixtures::three_state()) - 1.37).abs() < 1e-12);
        assert!((oracle::value_iteration(&fixtures::bandit()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn law_srm_matches_quantile_srm_on_uniform_atoms() {
        let atoms = [-1.0, 0.5, 2.0, 3.0];
        let law: Vec<(f64, f64)> = atoms.iter().map(|&a| (a, 0.25)).collect();
        let spec = RiskSpectrum::exponential(2.0).unwrap();
        let q = QuantileDistribution::new(atoms.to_vec()).unwrap();
        assert!((law_srm(&spec, &law) - spec.srm_of_quantiles(&q)).abs() < 1e-12);
    }
}
