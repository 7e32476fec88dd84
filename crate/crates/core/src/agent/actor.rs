//! Policy networks: categorical, fixed-std Gaussian and deterministic.
//!
//! Continuous heads squash the network output into the action box as
//! `mid + half * tanh(f)`; the Gaussian adds noise with standard deviation
//! `std * half` on top of that mean and clips to the box.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::ActionSpace;
use crate::error::{Result, SrmError};
use crate::nn::{Gradients, Mlp, Tape};
use crate::tabular::softmax;
use crate::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorKind {
    Categorical,
    Gaussian,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub kind: ActorKind,
    pub net: Mlp,
    space: ActionSpace,
    /// Gaussian std as a fraction of the half-range.
    std: f64,
}

/// `(mid, half)` of each action dimension.
pub fn box_geometry(space: &ActionSpace) -> (Vec<f64>, Vec<f64>) {
    match space {
        ActionSpace::Discrete(_) => (vec![], vec![]),
        ActionSpace::Continuous { low, high } => (
            low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect(),
            low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect(),
        ),
    }
}

/// Critic-side encoding: one-hot for discrete actions, raw otherwise.
pub fn encode_action(space: &ActionSpace, action: &[f64]) -> Vec<f64> {
    match space {
        ActionSpace::Discrete(n) => {
            let mut v = vec![0.0; *n];
            v[(action[0].round() as usize).min(n - 1)] = 1.0;
            v
        }
        ActionSpace::Continuous { .. } => action.to_vec(),
    }
}

pub fn encoded_action_dim(space: &ActionSpace) -> usize {
    match space {
        ActionSpace::Discrete(n) => *n,
        ActionSpace::Continuous { low, .. } => low.len(),
    }
}

impl Actor {
    pub fn new(kind: ActorKind, net: Mlp, space: ActionSpace, std: f64) -> Result<Self> {
        let want = encoded_action_dim(&space);
        if net.output_dim() != want {
            return Err(SrmError::shape(format!("actor outputs {} values, action needs {want}", net.output_dim())));
        }
        match (kind, &space) {
            (ActorKind::Categorical, ActionSpace::Discrete(_)) => {}
            (ActorKind::Gaussian | ActorKind::Deterministic, ActionSpace::Continuous { .. }) => {}
            _ => {
                return Err(SrmError::param(format!("{kind:?} actor does not fit action space {space:?}")));
            }
        }
        if kind == ActorKind::Gaussian && !(std > 0.0) {
            return Err(SrmError::param("Gaussian actor std must be positive"));
        }
        Ok(Actor { kind, net, space, std })
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    /// Squashed means (continuous) or action probabilities (categorical).
    pub fn head(&self, raw: &Array2<f64>) -> Array2<f64> {
        match self.kind {
            ActorKind::Categorical => {
                let mut out = raw.clone();
                for mut row in out.rows_mut() {
                    let p = softmax(row.as_slice().expect("contiguous"));
                    row.iter_mut().zip(p).for_each(|(r, p)| *r = p);
                }
                out
            }
            _ => {
                let (mid, half) = box_geometry(&self.space);
                let mut out = raw.clone();
                for mut row in out.rows_mut() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = mid[j] + half[j] * v.tanh();
                    }
                }
                out
            }
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.head(&self.net.forward(x)?))
    }

    /// Greedy action: argmax index or squashed mean.
    pub fn mode_from_head(&self, head: &[f64]) -> Vec<f64> {
        match self.kind {
            ActorKind::Categorical => {
                // lowest index among ties
                let mut best = 0;
                for (i, p) in head.iter().enumerate() {
                    if *p > head[best] {
                        best = i;
                    }
                }
                vec![best as f64]
            }
            _ => head.to_vec(),
        }
    }

    /// Draw from the policy; deterministic actors return the mean.
    pub fn sample_from_head(&self, head: &[f64], rng: &mut SimRng) -> Vec<f64> {
        match self.kind {
            ActorKind::Categorical => {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                for (i, p) in head.iter().enumerate() {
                    cum += p;
                    if u < cum {
                        return vec![i as f64];
                    }
                }
                vec![(head.len() - 1) as f64]
            }
            ActorKind::Gaussian => {
                let (_, half) = box_geometry(&self.space);
                let mut a: Vec<f64> = head
                    .iter()
                    .zip(&half)
                    .map(|(m, h)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + self.std * h * z
                    })
                    .collect();
                self.space.clip(&mut a);
                a
            }
            ActorKind::Deterministic => head.to_vec(),
        }
    }

    /// `log pi(a | x)`; for the Gaussian the clip mass is ignored.
    pub fn log_prob_from_head(&self, head: &[f64], action: &[f64]) -> f64 {
        match self.kind {
            ActorKind::Categorical => head[action[0].round() as usize].ln(),
            ActorKind::Gaussian => {
                let (_, half) = box_geometry(&self.space);
                head.iter()
                    .zip(action)
                    .zip(&half)
                    .map(|((m, a), h)| {
                        let sd = self.std * h;
                        -0.5 * ((a - m) / sd).powi(2) - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
                    })
                    .sum()
            }
            ActorKind::Deterministic => 0.0,
        }
    }

    /// Gradient of `Σ_b weights[b] * log pi(a_b | x_b)` w.r.t. the actor
    /// parameters, plus the objective value.
    pub fn weighted_log_prob_grad(
        &self,
        x: &Array2<f64>,
        actions: &[Vec<f64>],
        weights: &[f64],
    ) -> Result<(f64, Gradients)> {
        if self.kind == ActorKind::Deterministic {
            return Err(SrmError::param("deterministic actors have no log-probability"));
        }
        let (raw, tape) = self.net.forward_tape(x)?;
        let head = self.head(&raw);
        let mut d_raw = Array2::zeros(raw.dim());
        let mut objective = 0.0;
        let (_, half) = box_geometry(&self.space);
        for (b, (a, &w)) in actions.iter().zip(weights).enumerate() {
            let row = head.row(b);
            let row = row.as_slice().expect("contiguous");
            objective += w * self.log_prob_from_head(row, a);
            match self.kind {
                ActorKind::Categorical => {
                    let k = a[0].round() as usize;
                    for (j, p) in row.iter().enumerate() {
                        d_raw[[b, j]] = w * (f64::from(u8::from(j == k)) - p);
                    }
                }
                _ => {
                    for j in 0..row.len() {
                        let sd = self.std * half[j];
                        let t = raw[[b, j]].tanh();
                        d_raw[[b, j]] = w * (a[j] - row[j]) / (sd * sd) * half[j] * (1.0 - t * t);
                    }
                }
            }
        }
        let (grads, _) = self.net.backward(&tape, &d_raw)?;
        Ok((objective, grads))
    }

    /// Means and the tape needed by [`Self::backward_through_head`].
    pub fn forward_tape(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>, Tape)> {
        let (raw, tape) = self.net.forward_tape(x)?;
        let head = self.head(&raw);
        Ok((raw, head, tape))
    }

    /// Parameter gradient of `Σ d_action ⊙ action` for a continuous actor.
    pub fn backward_through_head(&self, raw: &Array2<f64>, tape: &Tape, d_action: &Array2<f64>) -> Result<Gradients> {
        let (_, half) = box_geometry(&self.space);
        let mut d_raw = d_action.clone();
        for ((b, j), v) in d_raw.indexed_iter_mut() {
            let t = raw[[b, j]].tanh();
            *v *= half[j] * (1.0 - t * t);
        }
        Ok(self.net.backward(tape, &d_raw)?.0)
    }
}

/// TD3 target smoothing: `clip_box(a + clip(noise * half, -clip * half, clip * half))`
/// where `noise` holds `N(0, sigma)` draws in half-range units.
pub fn target_policy_smoothing(action: &[f64], noise: &[f64], clip: f64, space: &ActionSpace) -> Vec<f64> {
    let (_, half) = box_geometry(space);
    let mut out: Vec<f64> = action
        .iter()
        .zip(noise)
        .zip(&half)
        .map(|((a, e), h)| a + (e * h).clamp(-clip * h, clip * h))
        .collect();
    space.clip(&mut out);
    out
}

/// `dim` draws of `N(0, sigma)`.
pub fn gaussian_noise(sigma: f64, dim: usize, rng: &mut SimRng) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn continuous() -> ActionSpace {
        ActionSpace::Continuous {
            low: vec![-1.0, 0.0],
            high: vec![1.0, 2.0],
        }
    }

    #[test]
    fn smoothing_examples() {
        let space = continuous();
        assert_eq!(target_policy_smoothing(&[0.5, 1.0], &[0.0, 0.0], 0.5, &space), vec![0.5, 1.0]);
        assert_eq!(target_policy_smoothing(&[0.9, 1.0], &[3.0, -3.0], 0.5, &space), vec![1.0, 0.5]);
        let mut rng = seeded_rng(8);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| gaussian_noise(0.2, 1, &mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sd / 0.2 - 1.0).abs() < 0.01, "{sd}");
    }

    #[test]
    fn encodings() {
        assert_eq!(encode_action(&ActionSpace::Discrete(3), &[2.0]), vec![0.0, 0.0, 1.0]);
        assert_eq!(encode_action(&continuous(), &[0.1, 0.2]), vec![0.1, 0.2]);
    }

    #[test]
    fn kind_must_fit_space() {
        let mut rng = seeded_rng(0);
        let net = Mlp::new(&[2, 3], &mut rng).unwrap();
        assert!(Actor::new(ActorKind::Deterministic, net.clone(), ActionSpace::Discrete(3), 0.1).is_err());
        assert!(Actor::new(ActorKind::Categorical, net, ActionSpace::Discrete(3), 0.1).is_ok());
    }

    fn fd_check(actor: &Actor, rng: &mut SimRng) -> f64 {
        let b = 4;
        let x = Array2::from_shape_fn((b, actor.net.input_dim()), |_| rng.random_range(-1.0..1.0));
        let head = actor.forward(&x).unwrap();
        let actions: Vec<Vec<f64>> = (0..b)
            .map(|i| actor.sample_from_head(head.row(i).as_slice().unwrap(), rng))
            .collect();
        let weights: Vec<f64> = (0..b).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, grads) = actor.weighted_log_prob_grad(&x, &actions, &weights).unwrap();
        let objective = |a: &Actor| {
            let head = a.forward(&x).unwrap();
            (0..b)
                .map(|i| weights[i] * a.log_prob_from_head(head.row(i).as_slice().unwrap(), &actions[i]))
                .sum::<f64>()
        };
        let p = actor.net.params();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for (i, g) in grads.flat().into_iter().enumerate() {
            let mut a = actor.clone();
            let mut q = p.clone();
            q[i] += eps;
            a.net.set_params(&q).unwrap();
            let up = objective(&a);
            q[i] -= 2.0 * eps;
            a.net.set_params(&q).unwrap();
            let down = objective(&a);
            let fd = (up - down) / (2.0 * eps);
            worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-3));
        }
        worst
    }

    #[test]
    fn log_prob_gradients_match_finite_differences() {
        let mut rng = seeded_rng(21);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let net = Mlp::new(&[3, 5, 3], &mut rng).unwrap();
            let cat = Actor::new(ActorKind::Categorical, net, ActionSpace::Discrete(3), 0.1).unwrap();
            worst = worst.max(fd_check(&cat, &mut rng));
            let net = Mlp::new(&[3, 5, 2], &mut rng).unwrap();
            let gauss = Actor::new(ActorKind::Gaussian, net, continuous(), 0.3).unwrap();
            worst = worst.max(fd_check(&gauss, &mut rng));
        }
        assert!(worst < 1e-4, "{worst}");
    }
}
