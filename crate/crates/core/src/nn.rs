//! Small fully connected networks with hand-written backpropagation.
//!
//! Weights are stored `in x out` so a batch `X` (rows = samples) maps to
//! `X W + b`. Hidden layers use ReLU, the output layer is linear.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SrmError};
use crate::SimRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
}

/// Activations kept from a forward pass for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input of every layer (post-activation of the previous one).
    inputs: Vec<Array2<f64>>,
}

/// Parameter gradients, one `(dW, db)` pair per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`. Weights are drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases start at zero.
    pub fn new(sizes: &[usize], rng: &mut SimRng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(SrmError::param(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Linear {
                    weight: Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weight.nrows()];
        sizes.extend(self.layers.iter().map(|l| l.weight.ncols()));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(SrmError::shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(h)
    }

    pub fn forward_tape(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let next = h.dot(&layer.weight) + &layer.bias;
            inputs.push(h);
            h = next;
            if i < last {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok((h, Tape { inputs }))
    }

    /// Gradients of `Σ grad_out ⊙ output` w.r.t. parameters and input.
    pub fn backward(&self, tape: &Tape, grad_out: &Array2<f64>) -> Result<(Gradients, Array2<f64>)> {
        let batch = tape.inputs[0].nrows();
        if grad_out.dim() != (batch, self.output_dim()) {
            return Err(SrmError::shape(format!(
                "output gradient has shape {:?}, expected ({batch}, {})",
                grad_out.dim(),
                self.output_dim()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.inputs[i];
            let dw = input.t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            layers.push((dw, db));
            let mut d_in = delta.dot(&layer.weight.t());
            if i > 0 {
                // input of layer i is relu(pre-activation), zero where inactive
                d_in.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = d_in;
        }
        layers.reverse();
        Ok((Gradients { layers }, delta))
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(SrmError::shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().expect("sized"));
        }
        Ok(())
    }

    /// `self <- (1 - nu) self + nu online`.
    pub fn polyak_from(&mut self, online: &Mlp, nu: f64) {
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weight.zip_mut_with(&o.weight, |t, &o| *t = (1.0 - nu) * *t + nu * o);
            t.bias.zip_mut_with(&o.bias, |t, &o| *t = (1.0 - nu) * *t + nu * o);
        }
    }

    pub fn to_state(&self) -> MlpState {
        MlpState {
            sizes: self.sizes(),
            params: self.params(),
        }
    }

    pub fn from_state(state: &MlpState) -> Result<Self> {
        if state.sizes.len() < 2 || state.sizes.contains(&0) {
            return Err(SrmError::shape(format!("invalid layer sizes {:?}", state.sizes)));
        }
        let mut mlp = Mlp {
            layers: state
                .sizes
                .windows(2)
                .map(|w| Linear {
                    weight: Array2::zeros((w[0], w[1])),
                    bias: Array1::zeros(w[1]),
                })
                .collect(),
        };
        mlp.set_params(&state.params)?;
        Ok(mlp)
    }
}

/// Serialisable network: layer sizes and row-major parameters, layer by
/// layer (weights then biases).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpState {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// One bias-corrected descent step on `params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(SrmError::shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Descends `net` along `grads`.
    pub fn apply(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        let mut params = net.params();
        self.step(&mut params, &grads.flat())?;
        net.set_params(&params)
    }
}

/// Row-major batch from per-sample feature vectors.
pub fn batch_matrix(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(SrmError::shape("ragged batch rows"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| SrmError::shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn scalar_objective(net: &Mlp, x: &Array2<f64>, weights: &Array2<f64>) -> f64 {
        (net.forward(x).unwrap() * weights).sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seeded_rng(3);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let mut net = Mlp::new(&[4, 6, 5, 3], &mut rng).unwrap();
            // shift biases so few units sit exactly at the kink
            let mut p = net.params();
            p.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
            net.set_params(&p).unwrap();
            let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
            let w = Array2::from_shape_fn((5, 3), |_| rng.random_range(-1.0..1.0));
            let (_, tape) = net.forward_tape(&x).unwrap();
            let (grads, dx) = net.backward(&tape, &w).unwrap();
            let analytic = grads.flat();
            let h = 1e-6;
            for (i, &g) in analytic.iter().enumerate() {
                let mut plus = p.clone();
                plus[i] += h;
                let mut minus = p.clone();
                minus[i] -= h;
                let mut a = net.clone();
                a.set_params(&plus).unwrap();
                let mut b = net.clone();
                b.set_params(&minus).unwrap();
                let fd = (scalar_objective(&a, &x, &w) - scalar_objective(&b, &x, &w)) / (2.0 * h);
                worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-3));
            }
            for r in 0..5 {
                for c in 0..4 {
                    let mut xp = x.clone();
                    xp[[r, c]] += h;
                    let mut xm = x.clone();
                    xm[[r, c]] -= h;
                    let fd = (scalar_objective(&net, &xp, &w) - scalar_objective(&net, &xm, &w)) / (2.0 * h);
                    let g = dx[[r, c]];
                    worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-3));
                }
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn state_round_trip_and_shapes() {
        let mut rng = seeded_rng(1);
        let net = Mlp::new(&[3, 8, 2], &mut rng).unwrap();
        assert_eq!(net.num_params(), 3 * 8 + 8 + 8 * 2 + 2);
        let back = Mlp::from_state(&net.to_state()).unwrap();
        assert_eq!(back, net);
        assert!(net.forward(&Array2::zeros((1, 4))).is_err());
        assert!(Mlp::new(&[3], &mut rng).is_err());
    }

    #[test]
    fn polyak_blend_is_exact() {
        let mut rng = seeded_rng(2);
        let online = Mlp::new(&[1, 1], &mut rng).unwrap();
        let mut target = online.clone();
        target.set_params(&[1.0, 0.0]).unwrap();
        let mut zero = online.clone();
        zero.set_params(&[0.0, 0.0]).unwrap();
        let nu: f64 = 0.25;
        for _ in 0..3 {
            target.polyak_from(&zero, nu);
        }
        assert_eq!(target.params()[0], (1.0 - nu).powi(3));
    }

    #[test]
    fn adam_examples() {
        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![1.0, -2.0];
        adam.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);

        let mut adam = Adam::new(2, 0.1);
        let mut p = vec![0.0, 0.0];
        adam.step(&mut p, &[3.0, -0.5]).unwrap();
        // bias-corrected m/sqrt(v) = sign(g) on the first step
        assert!((p[0] + 0.1).abs() < 1e-8 && (p[1] - 0.1).abs() < 1e-7);

        // second identical step: m_hat = g and v_hat = g^2 again, so the
        // step is the same size as the first
        let before = p[0];
        adam.step(&mut p, &[3.0, -0.5]).unwrap();
        assert!(((before - p[0]) - 0.1).abs() < 1e-8);

        // a smaller second gradient shrinks the step by the moment formula
        let mut adam = Adam::new(1, 1.0);
        let mut q = vec![0.0];
        adam.step(&mut q, &[1.0]).unwrap();
        adam.step(&mut q, &[0.5]).unwrap();
        let m = (0.9 * 0.1 * 1.0 + 0.1 * 0.5) / (1.0 - 0.81);
        let v = (0.999 * 0.001 * 1.0 + 0.001 * 0.25) / (1.0 - 0.999f64.powi(2));
        let second = m / (v.sqrt() + 1e-8);
        assert!((q[0] - (-1.0 + 1e-8 / (1.0 + 1e-8) - second)).abs() < 1e-12);
        assert!(second < 1.0);

        assert!(adam.step(&mut [0.0, 0.0], &[1.0, 1.0]).is_err());
    }
}
