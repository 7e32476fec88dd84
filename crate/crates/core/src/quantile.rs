//! N-atom quantile representation of a return distribution.
//!
//! Atom `i` (0-based) sits at level `tau_hat(i) = (i + 0.5) / N`, the midpoint
//! of the cell `(i/N, (i+1)/N]`. Raw critic outputs may be unsorted; call
//! [`QuantileDistribution::canonical`] before using a CDF or risk functional.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrmError};

/// Default Huber threshold for the quantile regression loss.
pub const DEFAULT_KAPPA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileDistribution {
    atoms: Vec<f64>,
}

impl QuantileDistribution {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(SrmError::input("a quantile distribution needs at least one atom"));
        }
        if let Some(bad) = atoms.iter().find(|a| !a.is_finite()) {
            return Err(SrmError::input(format!("non-finite atom {bad}")));
        }
        Ok(QuantileDistribution { atoms })
    }

    pub fn point_mass(value: f64, n: usize) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn into_atoms(self) -> Vec<f64> {
        self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Right edge of cell `i`, `(i + 1) / N`.
    pub fn tau(&self, i: usize) -> f64 {
        (i + 1) as f64 / self.len() as f64
    }

    pub fn tau_hat(&self, i: usize) -> f64 {
        midpoint_level(i, self.len())
    }

    pub fn is_canonical(&self) -> bool {
        self.atoms.windows(2).all(|w| w[0] <= w[1])
    }

    /// Sorted copy (atoms are finite, so the order is total).
    pub fn canonical(&self) -> QuantileDistribution {
        if self.is_canonical() {
            return self.clone();
        }
        let mut atoms = self.atoms.clone();
        atoms.sort_by(f64::total_cmp);
        QuantileDistribution { atoms }
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().sum::<f64>() / self.len() as f64
    }

    /// Distributional Bellman target `r + gamma * Z'`, atom by atom.
    pub fn bellman_target(&self, reward: f64, gamma: f64) -> QuantileDistribution {
        QuantileDistribution {
            atoms: self.atoms.iter().map(|q| reward + gamma * q).collect(),
        }
    }

    /// Right-continuous step CDF of the uniform atom mixture.
    pub fn cdf_at(&self, z: f64) -> f64 {
        self.atoms.iter().filter(|&&q| q <= z).count() as f64 / self.len() as f64
    }

    /// `N` quantiles of an empirical sample using the lower order statistic
    /// at rank `ceil(tau_hat * M)`.
    pub fn empirical_quantiles(samples: &[f64], n: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(SrmError::input("empirical quantiles of an empty sample"));
        }
        if n == 0 {
            return Err(SrmError::input("quantile count must be positive"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let atoms = (0..n)
            .map(|i| sorted[order_statistic_rank(midpoint_level(i, n), m) - 1])
            .collect();
        Self::new(atoms)
    }

    /// `N` quantiles `F⁻¹(tau_hat)` of a finite weighted law given as
    /// `(value, probability)` pairs. Uses the lower quantile
    /// `inf { z : F(z) >= tau }`, which is the weighted analogue of
    /// [`Self::empirical_quantiles`].
    pub fn from_weighted_law(law: &[(f64, f64)], n: usize) -> Result<Self> {
        if law.is_empty() {
            return Err(SrmError::input("quantiles of an empty law"));
        }
        let mut sorted = law.to_vec();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = sorted.iter().map(|p| p.1).sum();
        let mut atoms = Vec::with_capacity(n);
        let mut idx = 0;
        let mut cum = sorted[0].1 / total;
        for i in 0..n {
            let level = midpoint_level(i, n);
            // relative slack keeps exact ties (e.g. F = 0.5 at tau 0.5) stable
            while cum < level - 1e-12 && idx + 1 < sorted.len() {
                idx += 1;
                cum += sorted[idx].1 / total;
            }
            atoms.push(sorted[idx].0);
        }
        Self::new(atoms)
    }
}

pub fn midpoint_level(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / (2 * n) as f64
}

/// 1-based rank `ceil(level * m)`, kept inside `1..=m`.
fn order_statistic_rank(level: f64, m: usize) -> usize {
    let raw = (level * m as f64 - 1e-12).ceil();
    (raw.max(1.0) as usize).min(m)
}

fn huber(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        0.5 * u * u
    } else {
        kappa * (u.abs() - 0.5 * kappa)
    }
}

fn huber_derivative(u: f64, kappa: f64) -> f64 {
    if u.abs() <= kappa {
        u
    } else {
        kappa * u.signum()
    }
}

/// Quantile regression Huber loss of predicted atoms against target samples
/// and its gradient with respect to each predicted atom.
///
/// `loss = Σ_i mean_j |tau_hat_i - 1{u_ij < 0}| * huber_kappa(u_ij)` with
/// `u_ij = y_j - q_i`. Predicted atoms are used in the given order.
pub fn huber_quantile_loss(
    predicted: &[f64],
    targets: &[f64],
    kappa: f64,
) -> Result<(f64, Vec<f64>)> {
    if targets.is_empty() {
        return Err(SrmError::input("quantile loss needs at least one target"));
    }
    if predicted.is_empty() {
        return Err(SrmError::input("quantile loss needs at least one predicted atom"));
    }
    if !(kappa > 0.0) {
        return Err(SrmError::param(format!("Huber threshold must be > 0, got {kappa}")));
    }
    let n = predicted.len();
    let inv_m = 1.0 / targets.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for (i, &q) in predicted.iter().enumerate() {
        let tau = midpoint_level(i, n);
        let mut li = 0.0;
        let mut gi = 0.0;
        for &y in targets {
            let u = y - q;
            let weight = if u < 0.0 { 1.0 - tau } else { tau };
            li += weight * huber(u, kappa);
            gi -= weight * huber_derivative(u, kappa);
        }
        loss += li * inv_m;
        grad[i] = gi * inv_m;
    }
    Ok((loss, grad))
}

/// Pinball (check) loss `Σ_i mean_j u (tau_hat_i - 1{u < 0})`.
///
/// `huber_quantile_loss(.., kappa) / kappa` converges to this as `kappa -> 0`.
pub fn pinball_loss(predicted: &[f64], targets: &[f64]) -> f64 {
    let n = predicted.len();
    let m = targets.len() as f64;
    predicted
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let tau = midpoint_level(i, n);
            targets
                .iter()
                .map(|&y| {
                    let u = y - q;
                    u * (tau - if u < 0.0 { 1.0 } else { 0.0 })
                })
                .sum::<f64>()
                / m
        })
        .sum()
}
