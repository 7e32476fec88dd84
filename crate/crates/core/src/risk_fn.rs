//! The piecewise-linear concave function that attains the supremum form of
//! a spectral risk measure, built from N quantiles of a return distribution.
//!
//! `h(z) = Σ_i w_i (q_i + min(z - q_i, 0) / tau_hat_i)` with
//! `w_i = tau_hat_i (phi(tau_{i-1}) - phi(tau_i))`. The last level uses
//! `phi(tau_N) := 0` so that spectrum mass sitting at level one (the mean
//! component of Mean-CVaR, or the whole of the neutral spectrum) is kept.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrmError};
use crate::quantile::{midpoint_level, QuantileDistribution};
use crate::spectrum::RiskSpectrum;

/// Immutable once built; a refresh replaces the whole value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearH {
    spectrum: RiskSpectrum,
    breakpoints: Vec<f64>,
    weights: Vec<f64>,
    levels: Vec<f64>,
    /// `w_i / tau_hat_i`, the slope lost when `z` crosses `q_i`.
    slopes: Vec<f64>,
}

impl PiecewiseLinearH {
    /// Builds `h` from the quantiles of `dist` (sorted first if needed).
    pub fn build(spectrum: &RiskSpectrum, dist: &QuantileDistribution) -> Self {
        let dist = dist.canonical();
        let n = dist.len();
        let mut weights = Vec::with_capacity(n);
        let mut levels = Vec::with_capacity(n);
        let mut slopes = Vec::with_capacity(n);
        let mut left = spectrum.left_density(n);
        for i in 0..n {
            let right = if i + 1 == n {
                0.0
            } else {
                spectrum.phi((i + 1) as f64 / n as f64)
            };
            let level = midpoint_level(i, n);
            // non-increasing phi; clamp round-off so weights stay >= 0
            let drop = (left - right).max(0.0);
            weights.push(level * drop);
            levels.push(level);
            slopes.push(drop);
            left = right;
        }
        PiecewiseLinearH {
            spectrum: *spectrum,
            breakpoints: dist.into_atoms(),
            weights,
            levels,
            slopes,
        }
    }

    pub fn spectrum(&self) -> &RiskSpectrum {
        &self.spectrum
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    /// Left slope of `h`, i.e. its Lipschitz constant (`phi(0)` for bounded
    /// spectra).
    pub fn max_slope(&self) -> f64 {
        self.slopes.iter().sum()
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.breakpoints
            .iter()
            .zip(&self.weights)
            .zip(&self.slopes)
            .map(|((&q, &w), &slope)| w * q + slope * (z - q).min(0.0))
            .sum()
    }

    /// Derivative of `h`; at a breakpoint the right derivative is returned.
    pub fn slope(&self, z: f64) -> f64 {
        self.breakpoints
            .iter()
            .zip(&self.slopes)
            .filter(|(&q, _)| z < q)
            .map(|(_, &s)| s)
            .sum()
    }

    /// `E[h(Z)]` for the uniform mixture of atoms.
    pub fn expect(&self, dist: &QuantileDistribution) -> f64 {
        self.expect_atoms(dist.atoms())
    }

    pub fn expect_atoms(&self, atoms: &[f64]) -> f64 {
        atoms.iter().map(|&q| self.eval(q)).sum::<f64>() / atoms.len() as f64
    }

    /// `E[h(Z)]` for a finite weighted law of `(value, probability)` pairs.
    pub fn expect_law(&self, law: &[(f64, f64)]) -> f64 {
        law.iter().map(|&(v, p)| p * self.eval(v)).sum()
    }

    /// Risk-adjusted action value `E[h(s + c Z)] / c` on an extended state.
    pub fn q_value(&self, s: f64, c: f64, dist: &QuantileDistribution) -> Result<f64> {
        if !(c > 0.0) {
            return Err(SrmError::Domain(format!(
                "discount product must be positive, got {c}"
            )));
        }
        Ok(self.q_value_atoms(s, c, dist.atoms()))
    }

    /// Unchecked variant of [`Self::q_value`] on raw atoms; `c > 0` assumed.
    pub fn q_value_atoms(&self, s: f64, c: f64, atoms: &[f64]) -> f64 {
        let total: f64 = atoms.iter().map(|&g| self.eval(s + c * g)).sum();
        total / (atoms.len() as f64 * c)
    }

    /// Gradient of [`Self::q_value_atoms`] with respect to each atom:
    /// `h'(s + c g_j) / N` (the `c` cancels).
    pub fn q_value_atom_grad(&self, s: f64, c: f64, atoms: &[f64], out: &mut [f64]) {
        let inv_n = 1.0 / atoms.len() as f64;
        for (o, &g) in out.iter_mut().zip(atoms) {
            *o = self.slope(s + c * g) * inv_n;
        }
    }
}

/// Per-state "iterative" baseline value: the spectral risk of the critic's
/// return distribution at that state, ignoring the accumulated reward.
pub fn iterative_risk_q(spectrum: &RiskSpectrum, dist: &QuantileDistribution) -> f64 {
    spectrum.srm_of_quantiles(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cvar_half_h() -> PiecewiseLinearH {
        let dist = QuantileDistribution::new(vec![0.0, 2.0]).unwrap();
        PiecewiseLinearH::build(&RiskSpectrum::cvar(0.5).unwrap(), &dist)
    }

    #[test]
    fn build_examples() {
        let h = cvar_half_h();
        assert_eq!(h.weights(), &[0.0, 1.5]);
        assert_eq!(h.levels(), &[0.25, 0.75]);
        let dist = QuantileDistribution::new(vec![-3.0, 8.0]).unwrap();
        let h = PiecewiseLinearH::build(&RiskSpectrum::neutral(), &dist);
        assert_eq!(h.weights(), &[0.0, 0.75]);
        let dist = QuantileDistribution::new(vec![0.0, 2.0]).unwrap();
        let h = PiecewiseLinearH::build(&RiskSpectrum::mean_cvar(0.5, 0.5).unwrap(), &dist);
        assert_eq!(h.weights(), &[0.0, 1.125]);
    }

    #[test]
    fn eval_examples() {
        let h = cvar_half_h();
        assert!((h.eval(1.0) - 1.0).abs() < 1e-12);
        assert!((h.eval(3.0) - 3.0).abs() < 1e-12);
        assert!((h.eval(0.0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn slope_examples() {
        let h = cvar_half_h();
        assert_eq!(h.slope(-1.0), 2.0);
        assert_eq!(h.slope(1.0), 2.0);
        assert_eq!(h.slope(3.0), 0.0);
        // right derivative at the breakpoint
        assert_eq!(h.slope(2.0), 0.0);
    }

    #[test]
    fn expect_examples() {
        let h = cvar_half_h();
        let dist = QuantileDistribution::new(vec![0.0, 2.0]).unwrap();
        assert!((h.expect(&dist) - 1.0).abs() < 1e-12);
        let point = QuantileDistribution::point_mass(5.0, 4).unwrap();
        let h = PiecewiseLinearH::build(&RiskSpectrum::neutral(), &point);
        assert!((h.expect(&point) - 5.0 * 7.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn q_value_examples() {
        let h = cvar_half_h();
        let dist = QuantileDistribution::new(vec![0.0, 2.0]).unwrap();
        assert_eq!(h.q_value(0.0, 1.0, &dist).unwrap(), h.expect(&dist));
        let zero = QuantileDistribution::new(vec![0.0]).unwrap();
        let q = h.q_value(3.0, 0.9, &zero).unwrap();
        assert!((q - 3.0 / 0.9).abs() < 1e-12);
        assert!(h.q_value(0.0, 0.0, &dist).is_err());
        assert!(h.q_value(0.0, -1.0, &dist).is_err());
    }

    #[test]
    fn iterative_examples() {
        let two = QuantileDistribution::new(vec![0.0, 2.0]).unwrap();
        let rev = QuantileDistribution::new(vec![2.0, 0.0]).unwrap();
        let cvar = RiskSpectrum::cvar(0.5).unwrap();
        assert_eq!(iterative_risk_q(&RiskSpectrum::neutral(), &two), 1.0);
        assert_eq!(iterative_risk_q(&cvar, &two), 0.0);
        assert_eq!(iterative_risk_q(&cvar, &rev), 0.0);
    }

    /// Closed form of the CVaR(k/N) discretisation error on its own atoms:
    /// `expect_h - CVaR = q_{k+1} / (2k)`.
    #[test]
    fn cvar_error_law() {
        for (atoms, k) in [
            (vec![0.0, 2.0], 1usize),
            (
                vec![-4.0, -1.5, -0.5, 0.25, 1.0, 1.75, 2.0, 3.0, 4.5, 7.0],
                2usize,
            ),
        ] {
            let n = atoms.len();
            let spec = RiskSpectrum::cvar(k as f64 / n as f64).unwrap();
            let dist = QuantileDistribution::new(atoms.clone()).unwrap();
            let h = PiecewiseLinearH::build(&spec, &dist);
            let exact = spec.srm_of_quantiles(&dist);
            let err = h.expect(&dist) - exact;
            assert!((err - atoms[k] / (2.0 * k as f64)).abs() < 1e-12, "{err}");
        }
    }

    fn spectra() -> Vec<RiskSpectrum> {
        ["neutral", "cvar:0.3", "mc:0.2,0.4", "exp:3", "dp:2.5", "wang:0.75", "ph:2"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }

    proptest! {
        #[test]
        fn weights_and_slopes_are_consistent(
            atoms in prop::collection::vec(-5.0f64..5.0, 1..40),
            which in 0usize..7,
        ) {
            let spec = spectra()[which];
            let dist = QuantileDistribution::new(atoms).unwrap();
            let h = PiecewiseLinearH::build(&spec, &dist);
            prop_assert!(h.weights().iter().all(|&w| w >= 0.0));
            let total: f64 = h.weights().iter().zip(h.levels()).map(|(w, t)| w / t).sum();
            prop_assert!((total - spec.left_density(dist.len())).abs() <= 1e-10);
        }

        #[test]
        fn h_is_concave_monotone_lipschitz(
            atoms in prop::collection::vec(-5.0f64..5.0, 1..30),
            which in 0usize..7,
            z1 in -8.0f64..8.0,
            z2 in -8.0f64..8.0,
            t in 0.01f64..0.99,
        ) {
            let spec = spectra()[which];
            let h = PiecewiseLinearH::build(&spec, &QuantileDistribution::new(atoms).unwrap());
            let (lo, hi) = if z1 < z2 { (z1, z2) } else { (z2, z1) };
            prop_assert!(h.eval(lo) <= h.eval(hi) + 1e-12);
            let mid = t * lo + (1.0 - t) * hi;
            prop_assert!(h.eval(mid) >= t * h.eval(lo) + (1.0 - t) * h.eval(hi) - 1e-12);
            let lip = h.max_slope();
            prop_assert!((h.eval(hi) - h.eval(lo)).abs() <= lip * (hi - lo) + 1e-12);
            let (s_lo, s_hi) = (h.slope(lo), h.slope(hi));
            prop_assert!(s_lo >= s_hi - 1e-12);
            prop_assert!(s_lo >= 0.0 && s_lo <= lip + 1e-12);
        }

        /// Ranking actions by `q_value` agrees with the
        /// `Σ_i (phi(tau_{i-1}) - phi(tau_i)) min(s + c q_j - q_i, 0)` score
        /// up to a positive affine map.
        #[test]
        fn argmax_matches_action_selection_score(
            base in prop::collection::vec(-3.0f64..3.0, 8),
            actions in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 8), 2..5),
            s in -2.0f64..2.0,
            c in 0.1f64..1.0,
            which in 0usize..7,
        ) {
            let spec = spectra()[which];
            let h = PiecewiseLinearH::build(&spec, &QuantileDistribution::new(base).unwrap());
            let score = |atoms: &[f64]| -> f64 {
                atoms.iter().map(|&g| {
                    h.breakpoints().iter().zip(h.weights()).zip(h.levels())
                        .map(|((&q, &w), &t)| (w / t) * (s + c * g - q).min(0.0))
                        .sum::<f64>()
                }).sum::<f64>() / atoms.len() as f64
            };
            let constant: f64 = h.breakpoints().iter().zip(h.weights()).map(|(q, w)| q * w).sum();
            for a in &actions {
                let q = h.q_value_atoms(s, c, a);
                prop_assert!((q - (constant + score(a)) / c).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn bellman_then_srm_is_affine() {
        let dist = QuantileDistribution::new(vec![-1.0, 0.5, 0.7, 3.0]).unwrap();
        for spec in spectra() {
            let base = spec.srm_of_quantiles(&dist);
            let mapped = spec.srm_of_quantiles(&dist.bellman_target(0.3, 0.9));
            assert!((mapped - (0.3 + 0.9 * base)).abs() < 1e-12);
        }
    }
}
