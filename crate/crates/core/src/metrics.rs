//! Evaluation metrics and the per-run report.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SrmError};

/// Rockafellar-Uryasev tail mean: the worst `alpha * M` outcomes, with a
/// fractional weight on the boundary order statistic.
pub fn empirical_cvar(returns: &[f64], alpha: f64) -> Result<f64> {
    if returns.is_empty() {
        return Err(SrmError::input("CVaR of an empty sample"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SrmError::param(format!("CVaR level {alpha} outside (0, 1]")));
    }
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mass = alpha * sorted.len() as f64;
    let mut remaining = mass;
    let mut total = 0.0;
    for v in sorted {
        if remaining <= 0.0 {
            break;
        }
        let w = remaining.min(1.0);
        total += w * v;
        remaining -= w;
    }
    Ok(total / mass)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

/// `100 (raw - random) / (expert - random)`.
pub fn normalized_score(raw: f64, random_ref: f64, expert_ref: f64) -> Result<f64> {
    if expert_ref == random_ref {
        return Err(SrmError::Domain("normalisation references coincide".into()));
    }
    Ok(100.0 * (raw - random_ref) / (expert_ref - random_ref))
}

/// Reference returns `(random, expert)` used to normalise scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReference {
    pub random: f64,
    pub expert: f64,
}

/// Mean-reverting trading: random policy -6.17, expert 1.72.
pub const TRADING_REFERENCE: ScoreReference = ScoreReference {
    random: -6.17,
    expert: 1.72,
};

/// Mean over population standard deviation; `None` for a flat series.
pub fn sharpe(daily_returns: &[f64]) -> Result<Option<f64>> {
    if daily_returns.len() < 2 {
        return Err(SrmError::input("Sharpe ratio needs at least two returns"));
    }
    let sd = std_dev(daily_returns);
    Ok((sd > 0.0).then(|| mean(daily_returns) / sd))
}

/// Largest peak-to-trough decline as a fraction of the peak.
pub fn max_drawdown(values: &[f64]) -> Result<f64> {
    if let Some(v) = values.iter().find(|v| !(**v > 0.0)) {
        return Err(SrmError::input(format!("drawdown needs positive values, got {v}")));
    }
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &v in values {
        peak = peak.max(v);
        worst = worst.max((peak - v) / peak);
    }
    Ok(worst)
}

/// Evaluation of one trained configuration across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    /// `returns[k]`: episode returns of seed `seeds[k]`.
    pub returns: Vec<Vec<f64>>,
    /// CVaR level reported in `cvar`.
    pub alpha: f64,
    pub mean: f64,
    pub cvar: f64,
    pub normalized: Option<f64>,
    /// Per-step portfolio log-returns, when the environment produces them.
    #[serde(default)]
    pub daily_returns: Vec<f64>,
    pub sharpe: Option<f64>,
    pub max_drawdown: Option<f64>,
}

impl EvalReport {
    pub fn from_returns(
        seeds: Vec<u64>,
        returns: Vec<Vec<f64>>,
        alpha: f64,
        reference: Option<ScoreReference>,
    ) -> Result<Self> {
        let pooled: Vec<f64> = returns.iter().flatten().copied().collect();
        let mean_return = if pooled.is_empty() {
            return Err(SrmError::input("no evaluation episodes"));
        } else {
            mean(&pooled)
        };
        let cvar = empirical_cvar(&pooled, alpha)?;
        let normalized = reference
            .map(|r| normalized_score(mean_return, r.random, r.expert))
            .transpose()?;
        Ok(EvalReport {
            seeds,
            returns,
            alpha,
            mean: mean_return,
            cvar,
            normalized,
            daily_returns: Vec::new(),
            sharpe: None,
            max_drawdown: None,
        })
    }

    /// Adds Sharpe ratio and drawdown of the compounded wealth path built
    /// from per-step log-returns.
    pub fn with_daily_returns(mut self, log_returns: Vec<f64>) -> Result<Self> {
        if log_returns.len() >= 2 {
            self.sharpe = sharpe(&log_returns)?;
            let mut wealth = Vec::with_capacity(log_returns.len() + 1);
            let mut w = 1.0;
            wealth.push(w);
            for r in &log_returns {
                w *= r.exp();
                wealth.push(w);
            }
            self.max_drawdown = Some(max_drawdown(&wealth)?);
        }
        self.daily_returns = log_returns;
        Ok(self)
    }

    pub fn episodes(&self) -> usize {
        self.returns.iter().map(Vec::len).sum()
    }

    /// Per-seed mean of each seed's returns.
    pub fn seed_means(&self) -> Vec<f64> {
        self.returns.iter().map(|r| mean(r)).collect()
    }

    /// `metric,seed,value` rows; `seed` is `all` for pooled aggregates.
    pub fn to_metrics_csv(&self) -> String {
        let mut out = String::from("metric,seed,value\n");
        let mut row = |metric: &str, seed: &str, value: f64| {
            out.push_str(&format!("{metric},{seed},{value}\n"));
        };
        for (seed, r) in self.seeds.iter().zip(&self.returns) {
            let s = seed.to_string();
            row("mean", &s, mean(r));
            if let Ok(c) = empirical_cvar(r, self.alpha) {
                row(&format!("cvar_{}", self.alpha), &s, c);
            }
            row("episodes", &s, r.len() as f64);
        }
        row("mean", "all", self.mean);
        row(&format!("cvar_{}", self.alpha), "all", self.cvar);
        if let Some(n) = self.normalized {
            row("normalized_score", "all", n);
        }
        if let Some(s) = self.sharpe {
            row("sharpe", "all", s);
        }
        if let Some(d) = self.max_drawdown {
            row("max_drawdown", "all", d);
        }
        out
    }
}

/// One row of a risk curve: CVaR at `alpha`, normalised when a reference
/// is known, mean and population std across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub mean_score: f64,
    pub std_score: f64,
}

/// CVaR-versus-level curve from per-seed return samples.
pub fn risk_curve(
    returns: &[Vec<f64>],
    levels: &[f64],
    reference: Option<ScoreReference>,
) -> Result<Vec<CurvePoint>> {
    levels
        .iter()
        .map(|&alpha| {
            let scores = returns
                .iter()
                .map(|r| {
                    let c = empirical_cvar(r, alpha)?;
                    match reference {
                        Some(rf) => normalized_score(c, rf.random, rf.expert),
                        None => Ok(c),
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(CurvePoint {
                alpha,
                mean_score: mean(&scores),
                std_score: std_dev(&scores),
            })
        })
        .collect()
}

pub fn risk_curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("alpha,mean_score,std_score\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.alpha, p.mean_score, p.std_score));
    }
    out
}

/// Levels `0.1, 0.2, ..., 1.0`.
pub fn default_curve_levels() -> Vec<f64> {
    (1..=10).map(|k| k as f64 / 10.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cvar_examples() {
        let x = [4.0, 1.0, 3.0, 2.0];
        assert!((empirical_cvar(&x, 0.5).unwrap() - 1.5).abs() < 1e-12);
        assert!((empirical_cvar(&x, 1.0).unwrap() - 2.5).abs() < 1e-12);
        assert!((empirical_cvar(&x, 0.375).unwrap() - 2.0 / 1.5).abs() < 1e-12);
        assert!(empirical_cvar(&[], 0.5).is_err());
        assert!(empirical_cvar(&x, 0.0).is_err());
    }

    #[test]
    fn normalized_score_examples() {
        let r = TRADING_REFERENCE;
        assert_eq!(normalized_score(-6.17, r.random, r.expert).unwrap(), 0.0);
        assert_eq!(normalized_score(1.72, r.random, r.expert).unwrap(), 100.0);
        assert!((normalized_score(-2.225, r.random, r.expert).unwrap() - 50.0).abs() < 1e-12);
        assert!(normalized_score(1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn sharpe_examples() {
        assert!((sharpe(&[0.01, 0.03]).unwrap().unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(sharpe(&[0.02, 0.02, 0.02]).unwrap(), None);
        let s = sharpe(&[0.01, -0.03, 0.02]).unwrap().unwrap();
        let n = sharpe(&[-0.01, 0.03, -0.02]).unwrap().unwrap();
        assert!((s + n).abs() < 1e-12);
        assert!(sharpe(&[0.1]).is_err());
    }

    #[test]
    fn drawdown_examples() {
        assert!((max_drawdown(&[100.0, 120.0, 90.0, 110.0]).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(max_drawdown(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(max_drawdown(&[100.0, 50.0]).unwrap(), 0.5);
        assert!(max_drawdown(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn report_round_trips_and_recomputes() {
        let report = EvalReport::from_returns(
            vec![1, 2],
            vec![vec![1.0, -2.0, 0.5], vec![0.25, 3.0, -1.0]],
            0.2,
            Some(TRADING_REFERENCE),
        )
        .unwrap()
        .with_daily_returns(vec![0.01, -0.02, 0.005])
        .unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let pooled: Vec<f64> = report.returns.iter().flatten().copied().collect();
        assert_eq!(report.mean, mean(&pooled));
        assert_eq!(report.cvar, empirical_cvar(&pooled, 0.2).unwrap());
        assert_eq!(report.episodes(), 6);
        let full = EvalReport::from_returns(vec![0], vec![pooled.clone()], 1.0, None).unwrap();
        assert!((full.cvar - full.mean).abs() < 1e-12);
        let csv = report.to_metrics_csv();
        assert!(csv.starts_with("metric,seed,value\n"));
        assert!(csv.contains("mean,all,"));
    }

    #[test]
    fn curve_csv_header() {
        let pts = risk_curve(&[vec![1.0, 2.0], vec![0.0, 4.0]], &default_curve_levels(), None).unwrap();
        assert_eq!(pts.len(), 10);
        let csv = risk_curve_csv(&pts);
        assert!(csv.starts_with("alpha,mean_score,std_score\n0.1,"));
        assert!((pts[9].mean_score - 1.75).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn cvar_non_decreasing_in_level(
            xs in proptest::collection::vec(-10.0f64..10.0, 1..40),
            a in 0.01f64..1.0,
            b in 0.01f64..1.0,
        ) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let cl = empirical_cvar(&xs, lo).unwrap();
            let ch = empirical_cvar(&xs, hi).unwrap();
            prop_assert!(cl <= ch + 1e-9);
        }

        #[test]
        fn normalized_score_is_affine(x in -50.0f64..50.0, y in -50.0f64..50.0, t in 0.0f64..1.0) {
            let r = TRADING_REFERENCE;
            let s = |v: f64| normalized_score(v, r.random, r.expert).unwrap();
            let mix = s(t * x + (1.0 - t) * y);
            prop_assert!((mix - (t * s(x) + (1.0 - t) * s(y))).abs() < 1e-9);
        }
    }
}
