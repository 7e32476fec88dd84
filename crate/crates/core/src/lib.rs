//! Static spectral-risk policy learning.
//!
//! A spectral risk measure (SRM) of the return is optimised with a bi-level
//! scheme: an outer step rebuilds a concave piecewise-linear utility `h`
//! from the quantiles of the current return distribution, an inner step
//! improves the policy for that fixed `h` on the extended state
//! `(observation, accumulated discounted reward, discount product)`.
//!
//! * [`spectrum`], [`quantile`] and [`risk_fn`] hold the risk machinery.
//! * [`tabular`] solves small MDPs exactly and checks the theory.
//! * [`nn`] and [`agent`] provide the distributional neural agents.
//! * [`data`], [`metrics`] and [`experiment`] cover offline datasets,
//!   evaluation metrics and experiment orchestration.

// `!(x > 0.0)` deliberately rejects NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod config;
pub mod data;
pub mod env;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod quantile;
pub mod risk_fn;
pub mod selftest;
pub mod spectrum;
pub mod tabular;

pub use error::{Result, SrmError};
pub use quantile::QuantileDistribution;
pub use risk_fn::PiecewiseLinearH;
pub use spectrum::RiskSpectrum;

use rand::SeedableRng;

/// Random generator used throughout; seeded runs are reproducible.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Derives an independent stream for worker `index` of a run seeded with
/// `seed` (SplitMix64 finaliser on the pair).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
