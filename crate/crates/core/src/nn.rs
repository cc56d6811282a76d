//! Dense feed-forward network on a flat parameter vector, with a tape-based
//! reverse pass. Shared by the surrogate dynamics model and the
//! behaviour-cloning baseline.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation output.
    fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// Layer `i` maps `sizes[i]` inputs to `sizes[i + 1]` outputs; parameters are
/// stored layer by layer as a row-major weight block followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Per-layer outputs of one forward pass (`acts[0]` is the input).
#[derive(Debug, Clone, Default)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha · x`
#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; the output layer is scaled by
    /// `output_scale` (0 gives a network that outputs exactly zero).
    pub fn new(sizes: &[usize], activation: Activation, rng: &mut ChaCha8Rng, output_scale: f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(SdoError::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let mut params = Vec::with_capacity(param_count(sizes));
        let layers = sizes.len() - 1;
        for (i, w) in sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let limit = (6.0 / (n_in + n_out) as f64).sqrt();
            let scale = if i + 1 == layers { output_scale } else { 1.0 };
            for _ in 0..n_in * n_out {
                params.push(scale * rng.gen_range(-limit..limit));
            }
            params.extend(std::iter::repeat(0.0).take(n_out));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        })
    }

    pub fn from_parts(sizes: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || params.len() != param_count(&sizes) {
            return Err(SdoError::Config(format!(
                "parameter vector of length {} does not fit layer sizes {sizes:?}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(SdoError::NonFinite("network parameters".into()));
        }
        Ok(Self {
            sizes,
            activation,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two layers")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Zeroes the weights and bias of the output layer.
    pub fn zero_output_layer(&mut self) {
        let n = self.sizes.len();
        let last = self.sizes[n - 2] * self.sizes[n - 1] + self.sizes[n - 1];
        let len = self.params.len();
        self.params[len - last..].iter_mut().for_each(|p| *p = 0.0);
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        let mut off = 0;
        let mut acc = 0.0;
        for w in self.sizes.windows(2) {
            let nw = w[0] * w[1];
            acc += self.params[off..off + nw].iter().map(|p| p * p).sum::<f64>();
            off += nw + w[1];
        }
        acc
    }

    /// Adds `scale · ∂(Σ W²)/∂θ` to `grad`.
    pub fn add_weight_decay_grad(&self, scale: f64, grad: &mut [f64]) {
        let mut off = 0;
        for w in self.sizes.windows(2) {
            let nw = w[0] * w[1];
            for i in off..off + nw {
                grad[i] += 2.0 * scale * self.params[i];
            }
            off += nw + w[1];
        }
    }

    pub fn forward(&self, input: &[f64], tape: &mut Tape) {
        debug_assert_eq!(input.len(), self.sizes[0]);
        let layers = self.sizes.len() - 1;
        tape.acts.resize(layers + 1, Vec::new());
        tape.acts[0].clear();
        tape.acts[0].extend_from_slice(input);
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (prev, rest) = tape.acts.split_at_mut(l + 1);
            let a_in = &prev[l];
            let a_out = &mut rest[0];
            a_out.clear();
            let weights = &self.params[off..off + n_in * n_out];
            let bias = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let z = bias[o] + dot(row, a_in);
                a_out.push(if l + 1 < layers { self.activation.apply(z) } else { z });
            }
            off += n_in * n_out + n_out;
        }
    }

    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        let mut tape = Tape::default();
        self.forward(input, &mut tape);
        tape.output().to_vec()
    }

    /// Reverse pass: accumulates `∂/∂θ` into `d_params` (when given) and
    /// overwrites `d_input` with the input adjoint for the output adjoint
    /// `d_out`.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], mut d_params: Option<&mut [f64]>, d_input: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = d_out.to_vec();
        let mut next = Vec::new();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                for (d, a) in delta.iter_mut().zip(&tape.acts[l + 1]) {
                    *d *= self.activation.slope_from_output(*a);
                }
            }
            let off = offsets[l];
            let a_in = &tape.acts[l];
            let weights = &self.params[off..off + n_in * n_out];
            if let Some(d_params) = d_params.as_deref_mut() {
                let (dw, db) = d_params[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    db[o] += d;
                    axpy(d, a_in, &mut dw[o * n_in..(o + 1) * n_in]);
                }
            }
            next.clear();
            next.resize(n_in, 0.0);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                axpy(d, &weights[o * n_in..(o + 1) * n_in], &mut next);
            }
            std::mem::swap(&mut delta, &mut next);
        }
        d_input.copy_from_slice(&delta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn net(sizes: &[usize], act: Activation, seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mlp::new(sizes, act, &mut rng, 1.0).unwrap();
        for p in m.params_mut() {
            *p += 0.1 * rng.gen_range(-1.0..1.0);
        }
        m
    }

    #[test]
    fn param_layout() {
        assert_eq!(param_count(&[3, 4, 2]), 3 * 4 + 4 + 4 * 2 + 2);
        let m = net(&[3, 4, 2], Activation::Tanh, 1);
        assert_eq!(m.n_params(), 26);
        assert_eq!(m.predict(&[0.1, 0.2, 0.3]).len(), 2);
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut m = net(&[5, 7, 3], Activation::Sigmoid, 2);
        m.zero_output_layer();
        assert!(m.predict(&[1.0, -2.0, 0.5, 0.0, 3.0]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_matches_central_differences() {
        for act in [Activation::Tanh, Activation::Sigmoid] {
            let m = net(&[4, 5, 3, 2], act, 3);
            let x = [0.3, -0.7, 1.1, 0.05];
            let c = [0.7, -1.3];
            let f = |m: &Mlp, x: &[f64]| m.predict(x).iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
            let mut tape = Tape::default();
            m.forward(&x, &mut tape);
            let mut dp = vec![0.0; m.n_params()];
            let mut dx = vec![0.0; 4];
            m.backward(&tape, &c, Some(&mut dp), &mut dx);
            let h = 1e-6;
            for i in 0..m.n_params() {
                let mut mp = m.clone();
                mp.params_mut()[i] += h;
                let mut mm = m.clone();
                mm.params_mut()[i] -= h;
                let fd = (f(&mp, &x) - f(&mm, &x)) / (2.0 * h);
                assert!((fd - dp[i]).abs() < 1e-8, "param {i}: {fd} vs {}", dp[i]);
            }
            for i in 0..4 {
                let mut xp = x;
                xp[i] += h;
                let mut xm = x;
                xm[i] -= h;
                let fd = (f(&m, &xp) - f(&m, &xm)) / (2.0 * h);
                assert!((fd - dx[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn weight_decay_skips_biases() {
        let m = Mlp::from_parts(vec![1, 1], Activation::Tanh, vec![2.0, 5.0]).unwrap();
        assert_eq!(m.weight_sq_norm(), 4.0);
        let mut g = vec![0.0; 2];
        m.add_weight_decay_grad(0.5, &mut g);
        assert_eq!(g, vec![2.0, 0.0]);
    }

    #[test]
    fn rejects_mismatched_parts() {
        assert!(Mlp::from_parts(vec![2, 2], Activation::Tanh, vec![0.0; 5]).is_err());
        assert!(Mlp::from_parts(vec![1, 1], Activation::Tanh, vec![f64::NAN, 0.0]).is_err());
    }
}
