//! Risk spectra: non-increasing weightings over quantile levels.
//!
//! A spectrum `phi` on `[0, 1]` integrates to one; its running integral
//! `g(u) = ∫₀ᵘ phi` is the distortion used to weight quantile intervals.
//! The spectral risk of a return `Z` is `∫ F⁻¹(u) phi(u) du`, which covers
//! the mean (`phi ≡ 1`), CVaR and the smooth families below.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrmError};
use crate::quantile::QuantileDistribution;

/// Smallest CVaR level accepted; anything lower makes `phi(0)` unusable.
pub const MIN_CVAR_LEVEL: f64 = 1e-6;

/// Parametric family of a spectrum. Parameters are validated by
/// [`RiskSpectrum`]; build through its constructors or `FromStr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectrumKind {
    Neutral,
    Cvar { alpha: f64 },
    MeanCvar { alpha: f64, omega: f64 },
    Exponential { alpha: f64 },
    DualPower { alpha: f64 },
    Wang { alpha: f64 },
    ProportionalHazard { alpha: f64 },
}

/// A validated risk spectrum. Immutable and `Copy`, so it can be shared
/// freely between workers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RiskSpectrum {
    kind: SpectrumKind,
}

impl RiskSpectrum {
    pub fn neutral() -> Self {
        RiskSpectrum {
            kind: SpectrumKind::Neutral,
        }
    }

    pub fn cvar(alpha: f64) -> Result<Self> {
        check_level("cvar", alpha)?;
        Ok(RiskSpectrum {
            kind: SpectrumKind::Cvar { alpha },
        })
    }

    pub fn mean_cvar(alpha: f64, omega: f64) -> Result<Self> {
        check_level("mc", alpha)?;
        if !(0.0..=1.0).contains(&omega) {
            return Err(SrmError::param(format!(
                "mc: mean weight must lie in [0, 1], got {omega}"
            )));
        }
        Ok(RiskSpectrum {
            kind: SpectrumKind::MeanCvar { alpha, omega },
        })
    }

    pub fn exponential(alpha: f64) -> Result<Self> {
        check_positive("exp", alpha)?;
        Ok(RiskSpectrum {
            kind: SpectrumKind::Exponential { alpha },
        })
    }

    pub fn dual_power(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 1.0) {
            return Err(SrmError::param(format!("dp: alpha must be >= 1, got {alpha}")));
        }
        Ok(RiskSpectrum {
            kind: SpectrumKind::DualPower { alpha },
        })
    }

    /// Risk-averse Wang transform, `g(u) = Φ(Φ⁻¹(u) + alpha)`.
    pub fn wang(alpha: f64) -> Result<Self> {
        check_positive("wang", alpha)?;
        Ok(RiskSpectrum {
            kind: SpectrumKind::Wang { alpha },
        })
    }

    /// Proportional hazard, `g(u) = u^(1/alpha)`. Non-increasing only for
    /// `alpha >= 1`.
    pub fn proportional_hazard(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 1.0) {
            return Err(SrmError::param(format!("ph: alpha must be >= 1, got {alpha}")));
        }
        Ok(RiskSpectrum {
            kind: SpectrumKind::ProportionalHazard { alpha },
        })
    }

    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    pub fn is_neutral(&self) -> bool {
        matches!(self.kind, SpectrumKind::Neutral)
            || matches!(self.kind, SpectrumKind::Cvar { alpha } if alpha == 1.0)
    }

    /// Left-continuous spectrum density at level `u`. Levels outside
    /// `[0, 1]` are clamped.
    pub fn phi(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            SpectrumKind::Neutral => 1.0,
            SpectrumKind::Cvar { alpha } => {
                if u <= alpha {
                    1.0 / alpha
                } else {
                    0.0
                }
            }
            SpectrumKind::MeanCvar { alpha, omega } => {
                let tail = if u <= alpha { 1.0 / alpha } else { 0.0 };
                omega + (1.0 - omega) * tail
            }
            SpectrumKind::Exponential { alpha } => {
                alpha * (-alpha * u).exp() / -(-alpha).exp_m1()
            }
            SpectrumKind::DualPower { alpha } => alpha * (1.0 - u).powf(alpha - 1.0),
            SpectrumKind::Wang { alpha } => {
                if u <= 0.0 {
                    f64::INFINITY
                } else if u >= 1.0 {
                    0.0
                } else {
                    let z = inverse_normal_cdf(u).expect("level in (0,1)");
                    (-alpha * z - 0.5 * alpha * alpha).exp()
                }
            }
            SpectrumKind::ProportionalHazard { alpha } => {
                if u <= 0.0 && alpha > 1.0 {
                    f64::INFINITY
                } else {
                    u.powf(1.0 / alpha - 1.0) / alpha
                }
            }
        }
    }

    /// Cumulative distortion `g(u) = ∫₀ᵘ phi`, in closed form.
    pub fn cumulative(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return 1.0;
        }
        match self.kind {
            SpectrumKind::Neutral => u,
            SpectrumKind::Cvar { alpha } => u.min(alpha) / alpha,
            SpectrumKind::MeanCvar { alpha, omega } => {
                omega * u + (1.0 - omega) * u.min(alpha) / alpha
            }
            SpectrumKind::Exponential { alpha } => (-alpha * u).exp_m1() / (-alpha).exp_m1(),
            SpectrumKind::DualPower { alpha } => 1.0 - (1.0 - u).powf(alpha),
            SpectrumKind::Wang { alpha } => {
                let z = inverse_normal_cdf(u).expect("level in (0,1)");
                normal_cdf(z + alpha)
            }
            SpectrumKind::ProportionalHazard { alpha } => u.powf(1.0 / alpha),
        }
    }

    /// Density at level zero used when slopes are built on an `n`-cell grid.
    ///
    /// Bounded spectra return `phi(0)`. Wang and proportional hazard with
    /// `alpha > 1` diverge at zero; for those the first cell's mean density
    /// `n * g(1/n)` stands in.
    pub fn left_density(&self, n: usize) -> f64 {
        let at_zero = self.phi(0.0);
        if at_zero.is_finite() {
            at_zero
        } else {
            n as f64 * self.cumulative(1.0 / n as f64)
        }
    }

    /// Exact spectral risk of the uniform mixture of the given atoms.
    /// Atoms are sorted internally when needed.
    pub fn srm_of_quantiles(&self, dist: &QuantileDistribution) -> f64 {
        let canonical = dist.canonical();
        let n = canonical.len() as f64;
        let mut prev = 0.0;
        let mut total = 0.0;
        for (i, q) in canonical.atoms().iter().enumerate() {
            let next = self.cumulative((i + 1) as f64 / n);
            total += q * (next - prev);
            prev = next;
        }
        total
    }

    /// Weight of each sorted atom in `srm_of_quantiles`.
    pub fn interval_weights(&self, n: usize) -> Vec<f64> {
        let mut prev = 0.0;
        (1..=n)
            .map(|i| {
                let next = self.cumulative(i as f64 / n as f64);
                let w = next - prev;
                prev = next;
                w
            })
            .collect()
    }

    /// Short label used in file names and reports, e.g. `cvar0.2`.
    pub fn label(&self) -> String {
        self.to_string().replace([':', ','], "")
    }
}

fn check_level(name: &str, alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && (MIN_CVAR_LEVEL..=1.0).contains(&alpha)) {
        return Err(SrmError::param(format!(
            "{name}: level must lie in [{MIN_CVAR_LEVEL}, 1], got {alpha}"
        )));
    }
    Ok(())
}

fn check_positive(name: &str, alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(SrmError::param(format!("{name}: alpha must be > 0, got {alpha}")));
    }
    Ok(())
}

impl fmt::Display for RiskSpectrum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SpectrumKind::Neutral => write!(f, "neutral"),
            SpectrumKind::Cvar { alpha } => write!(f, "cvar:{alpha}"),
            SpectrumKind::MeanCvar { alpha, omega } => write!(f, "mc:{alpha},{omega}"),
            SpectrumKind::Exponential { alpha } => write!(f, "exp:{alpha}"),
            SpectrumKind::DualPower { alpha } => write!(f, "dp:{alpha}"),
            SpectrumKind::Wang { alpha } => write!(f, "wang:{alpha}"),
            SpectrumKind::ProportionalHazard { alpha } => write!(f, "ph:{alpha}"),
        }
    }
}

impl FromStr for RiskSpectrum {
    type Err = SrmError;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        let (name, args) = match text.split_once(':') {
            Some((name, args)) => (name.trim(), Some(args)),
            None => (text, None),
        };
        let numbers = |expected: usize| -> Result<Vec<f64>> {
            let args = args.ok_or_else(|| {
                SrmError::param(format!("spectrum `{text}`: missing parameters after `{name}`"))
            })?;
            let values = args
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| {
                        SrmError::param(format!(
                            "spectrum `{text}`: cannot parse `{}` as a number",
                            tok.trim()
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != expected {
                return Err(SrmError::param(format!(
                    "spectrum `{text}`: `{name}` takes {expected} parameter(s), got {}",
                    values.len()
                )));
            }
            Ok(values)
        };
        match name.to_ascii_lowercase().as_str() {
            "neutral" | "mean" => {
                if args.is_some() {
                    return Err(SrmError::param(format!(
                        "spectrum `{text}`: `neutral` takes no parameters"
                    )));
                }
                Ok(RiskSpectrum::neutral())
            }
            "cvar" => RiskSpectrum::cvar(numbers(1)?[0]),
            "mc" => {
                let v = numbers(2)?;
                RiskSpectrum::mean_cvar(v[0], v[1])
            }
            "exp" => RiskSpectrum::exponential(numbers(1)?[0]),
            "dp" => RiskSpectrum::dual_power(numbers(1)?[0]),
            "wang" => RiskSpectrum::wang(numbers(1)?[0]),
            "ph" => RiskSpectrum::proportional_hazard(numbers(1)?[0]),
            _ => Err(SrmError::param(format!(
                "spectrum `{text}`: unknown family `{name}` (expected one of neutral, cvar, mc, exp, dp, wang, ph)"
            ))),
        }
    }
}

impl TryFrom<String> for RiskSpectrum {
    type Error = SrmError;

    fn try_from(value: String) -> Result<Self> {
        value.parse()
    }
}

impl From<RiskSpectrum> for String {
    fn from(spec: RiskSpectrum) -> String {
        spec.to_string()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function.
///
/// Acklam's rational approximation (relative error ~1e-9) followed by one
/// Halley step against the exact CDF.
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(SrmError::Domain(format!(
            "normal quantile needs p in (0, 1), got {p}"
        )));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239e0,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838e0,
        -2.549732539343734e0,
        4.374664141464968e0,
        2.938163982698783e0,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996e0,
        3.754408661907416e0,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };

    // Halley refinement.
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_spectra() -> Vec<RiskSpectrum> {
        [
            "neutral", "cvar:0.2", "cvar:1", "mc:0.5,0.5", "mc:0.2,0.4", "exp:2.0", "dp:2.0",
            "wang:0.5", "ph:2.0",
        ]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect()
    }

    #[test]
    fn phi_examples() {
        assert_eq!(RiskSpectrum::cvar(0.2).unwrap().phi(0.1), 5.0);
        assert_eq!(RiskSpectrum::neutral().phi(0.7), 1.0);
        assert_eq!(RiskSpectrum::mean_cvar(0.5, 0.5).unwrap().phi(0.25), 1.5);
        // left-continuous at the CVaR level
        let c = RiskSpectrum::cvar(0.2).unwrap();
        assert_eq!(c.phi(0.2), 5.0);
        assert_eq!(c.phi(0.2000001), 0.0);
    }

    #[test]
    fn cumulative_examples() {
        assert_eq!(RiskSpectrum::cvar(0.2).unwrap().cumulative(0.1), 0.5);
        assert!((RiskSpectrum::dual_power(2.0).unwrap().cumulative(0.5) - 0.75).abs() < 1e-15);
        for spec in all_spectra() {
            assert!((spec.cumulative(1.0) - 1.0).abs() <= 1e-12, "{spec}");
            assert!((spec.cumulative(1.0 - 1e-15) - 1.0).abs() <= 1e-9, "{spec}");
            assert_eq!(spec.cumulative(0.0), 0.0);
        }
    }

    #[test]
    fn spectra_non_increasing_and_non_negative() {
        for spec in all_spectra() {
            let mut prev = f64::INFINITY;
            for k in 0..=1000 {
                let v = spec.phi(k as f64 / 1000.0);
                assert!(v >= 0.0, "{spec} negative at {k}");
                assert!(v <= prev + 1e-12, "{spec} increases at {k}");
                prev = v;
            }
        }
    }

    #[test]
    fn srm_examples() {
        let two = QuantileDistribution::new(vec![0.0, 2.0]).unwrap();
        assert_eq!(RiskSpectrum::neutral().srm_of_quantiles(&two), 1.0);
        assert_eq!(RiskSpectrum::cvar(0.5).unwrap().srm_of_quantiles(&two), 0.0);
        let point = QuantileDistribution::new(vec![5.0; 4]).unwrap();
        for spec in all_spectra() {
            assert!((spec.srm_of_quantiles(&point) - 5.0).abs() < 1e-12, "{spec}");
        }
        // unsorted input is sorted internally
        let rev = QuantileDistribution::new(vec![2.0, 0.0]).unwrap();
        assert_eq!(RiskSpectrum::cvar(0.5).unwrap().srm_of_quantiles(&rev), 0.0);
    }

    #[test]
    fn inverse_normal_examples() {
        assert!(inverse_normal_cdf(0.5).unwrap().abs() < 1e-15);
        assert!((inverse_normal_cdf(0.975).unwrap() - 1.959964).abs() < 1e-5);
        assert!((inverse_normal_cdf(0.025).unwrap() + 1.959964).abs() < 1e-5);
        assert!(inverse_normal_cdf(0.0).is_err());
        assert!(inverse_normal_cdf(1.0).is_err());
        assert!(inverse_normal_cdf(f64::NAN).is_err());
    }

    #[test]
    fn construction_errors() {
        assert!(RiskSpectrum::cvar(0.0).is_err());
        assert!(RiskSpectrum::cvar(1e-7).is_err());
        assert!(RiskSpectrum::cvar(1.5).is_err());
        assert!(RiskSpectrum::mean_cvar(0.2, 1.2).is_err());
        assert!(RiskSpectrum::exponential(-1.0).is_err());
        assert!(RiskSpectrum::dual_power(0.5).is_err());
        assert!(RiskSpectrum::proportional_hazard(0.5).is_err());
        assert!(RiskSpectrum::wang(0.0).is_err());
    }

    #[test]
    fn parse_round_trip_and_errors() {
        for spec in all_spectra() {
            let again: RiskSpectrum = spec.to_string().parse().unwrap();
            assert_eq!(again, spec);
        }
        let err = "cvar:abc".parse::<RiskSpectrum>().unwrap_err().to_string();
        assert!(err.contains("`abc`"), "{err}");
        let err = "foo:1".parse::<RiskSpectrum>().unwrap_err().to_string();
        assert!(err.contains("`foo`"), "{err}");
        let err = "mc:0.2".parse::<RiskSpectrum>().unwrap_err().to_string();
        assert!(err.contains("2 parameter"), "{err}");
        let json = serde_json::to_string(&RiskSpectrum::mean_cvar(0.2, 0.4).unwrap()).unwrap();
        assert_eq!(json, "\"mc:0.2,0.4\"");
    }

    #[test]
    fn neutral_equals_cvar_one() {
        let n = RiskSpectrum::neutral();
        let c = RiskSpectrum::cvar(1.0).unwrap();
        for k in 0..=20 {
            let u = k as f64 / 20.0;
            assert_eq!(n.phi(u), c.phi(u));
            assert!((n.cumulative(u) - c.cumulative(u)).abs() < 1e-15);
        }
        assert!(c.is_neutral());
    }

    #[test]
    fn left_density_handles_singular_spectra() {
        let wang = RiskSpectrum::wang(0.5).unwrap();
        assert!(wang.phi(0.0).is_infinite());
        let d = wang.left_density(50);
        assert!(d.is_finite() && d >= wang.phi(1.0 / 50.0));
        assert_eq!(RiskSpectrum::cvar(0.2).unwrap().left_density(50), 5.0);
    }
}
