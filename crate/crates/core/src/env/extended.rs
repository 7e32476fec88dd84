use serde::{Deserialize, Serialize};

/// Observation augmented with the discounted reward collected so far (`s`)
/// and the running discount product (`c = gamma^t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedState {
    pub base: Vec<f64>,
    pub s: f64,
    pub c: f64,
}

impl ExtendedState {
    pub fn initial(base: Vec<f64>) -> Self {
        ExtendedState { base, s: 0.0, c: 1.0 }
    }

    pub fn step(&self, reward: f64, gamma: f64, next_base: Vec<f64>) -> Self {
        extend_step(self, reward, gamma, next_base)
    }

    /// Network input: the observation followed by `s` and `c`.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.base.len() + 2);
        f.extend_from_slice(&self.base);
        f.push(self.s);
        f.push(self.c);
        f
    }
}

/// `s' = s + c r`, `c' = gamma c`.
pub fn extend_step(prev: &ExtendedState, reward: f64, gamma: f64, next_base: Vec<f64>) -> ExtendedState {
    debug_assert!(prev.c > 0.0);
    ExtendedState {
        base: next_base,
        s: prev.s + prev.c * reward,
        c: gamma * prev.c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let x0 = ExtendedState::initial(vec![]);
        let x1 = x0.step(3.0, 0.9, vec![]);
        assert_eq!((x1.s, x1.c), (3.0, 0.9));
        let same = x1.step(0.0, 0.9, vec![]);
        assert_eq!(same.s, x1.s);
        let two = x0.step(1.0, 0.5, vec![]).step(1.0, 0.5, vec![]);
        assert_eq!((two.s, two.c), (1.5, 0.25));
        assert_eq!(two.features(), vec![1.5, 0.25]);
    }

    proptest! {
        #[test]
        fn accumulates_discounted_return(
            rewards in prop::collection::vec(-5.0f64..5.0, 0..60),
            gamma in 0.0f64..0.999,
        ) {
            let mut x = ExtendedState::initial(vec![0.0]);
            for &r in &rewards {
                x = x.step(r, gamma, vec![0.0]);
            }
            let mut total = 0.0;
            let mut disc = 1.0;
            for &r in &rewards {
                total += disc * r;
                disc *= gamma;
            }
            prop_assert!((x.s - total).abs() <= 1e-12);
            prop_assert_eq!(x.c, disc);
        }
    }
}
