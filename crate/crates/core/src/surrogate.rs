//! Learned one-step dynamics `x̂_{k+1} = x_k + σ_Δ ⊙ f_θ(x_{k-H..k}, u_k, w_k)`
//! trained on multi-step rollouts, with reverse-mode gradients with respect
//! to the parameters and to the control inputs.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoError};
use crate::nn::{Activation, Mlp, Tape};
use crate::optim::{Adam, AdamConfig};
use crate::pwr::{ModelParams, Trajectory};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    /// `Σ W²` over all weight matrices.
    WeightDecay,
    /// Mean squared residual of the discretized iodine, xenon and rod
    /// equations along the predicted rollout.
    PhysicsResidual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    /// Context window `H`: number of past states besides the current one.
    pub context: usize,
    /// Rollout length `L` of the training loss.
    pub rollout: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lambda: f64,
    pub reg_kind: RegKind,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Training windows drawn per epoch; 0 uses every window.
    pub windows_per_epoch: usize,
    /// Stride between validation windows along each trajectory.
    pub val_stride: usize,
    pub train_fraction: f64,
    /// Scale of the initial output layer (0 starts from identity dynamics).
    pub init_output_scale: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            context: 1,
            rollout: 24,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            lambda: 0.0,
            reg_kind: RegKind::WeightDecay,
            seed: 0,
            max_epochs: 500,
            patience: 20,
            batch_size: 64,
            learning_rate: 3e-3,
            windows_per_epoch: 4096,
            val_stride: 8,
            train_fraction: 0.8,
            init_output_scale: 0.1,
        }
    }
}

impl SurrogateConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.rollout == 0 {
            errs.push("rollout (L) must be >= 1".to_string());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            errs.push(format!("hidden sizes must be positive (got {:?})", self.hidden));
        }
        if !(self.lambda >= 0.0) {
            errs.push(format!("lambda must be non-negative (got {})", self.lambda));
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be >= 1".into());
        }
        if self.val_stride == 0 {
            errs.push("val_stride must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            errs.push(format!("learning_rate must be positive (got {})", self.learning_rate));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            errs.push(format!("train_fraction must lie in (0, 1) (got {})", self.train_fraction));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(SdoError::Validation(errs))
        }
    }
}

/// States `x_0..x_T` with the controls and loads applied in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub states: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

impl From<&Trajectory> for Sequence {
    fn from(t: &Trajectory) -> Self {
        Self {
            states: t.states.iter().map(|s| s.to_vec()).collect(),
            u: t.u.clone(),
            w: t.w.clone(),
        }
    }
}

impl Sequence {
    pub fn steps(&self) -> usize {
        self.u.len()
    }
}

/// Per-feature z-score statistics fixed on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    /// Scale of the one-step increments `x_{k+1} - x_k`.
    pub d_std: Vec<f64>,
    pub u_mean: f64,
    pub u_std: f64,
    pub w_mean: f64,
    pub w_std: f64,
}

fn safe_std(var: f64, mean: f64) -> f64 {
    let s = var.max(0.0).sqrt();
    if s > 1e-12 * (1.0 + mean.abs()) {
        s
    } else {
        1.0
    }
}

impl Normalization {
    pub fn fit(data: &[Sequence]) -> Result<Self> {
        let first = data
            .iter()
            .find(|s| !s.states.is_empty())
            .ok_or_else(|| SdoError::Dataset("no states to fit normalization".into()))?;
        let n = first.states[0].len();
        let mut x_sum = vec![0.0; n];
        let mut x_sq = vec![0.0; n];
        let mut d_sq = vec![0.0; n];
        let (mut nx, mut nd) = (0.0, 0.0);
        let (mut us, mut usq, mut ws, mut wsq, mut nu) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for seq in data {
            for s in &seq.states {
                for j in 0..n {
                    x_sum[j] += s[j];
                }
                nx += 1.0;
            }
            for pair in seq.states.windows(2) {
                for j in 0..n {
                    d_sq[j] += (pair[1][j] - pair[0][j]).powi(2);
                }
                nd += 1.0;
            }
            for (&u, &w) in seq.u.iter().zip(&seq.w) {
                us += u;
                usq += u * u;
                ws += w;
                wsq += w * w;
                nu += 1.0;
            }
        }
        if nd == 0.0 {
            return Err(SdoError::Dataset("no transitions to fit normalization".into()));
        }
        let x_mean: Vec<f64> = x_sum.iter().map(|s| s / nx).collect();
        for seq in data {
            for s in &seq.states {
                for j in 0..n {
                    x_sq[j] += (s[j] - x_mean[j]).powi(2);
                }
            }
        }
        let x_std = (0..n).map(|j| safe_std(x_sq[j] / nx, x_mean[j])).collect();
        // increments are modelled around zero, so use the raw second moment
        let d_std = (0..n).map(|j| safe_std(d_sq[j] / nd, 0.0)).collect();
        let u_mean = us / nu;
        let w_mean = ws / nu;
        Ok(Self {
            x_mean,
            x_std,
            d_std,
            u_mean,
            u_std: safe_std(usq / nu - u_mean * u_mean, u_mean),
            w_mean,
            w_std: safe_std(wsq / nu - w_mean * w_mean, w_mean),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            x_mean: vec![0.0; n],
            x_std: vec![1.0; n],
            d_std: vec![1.0; n],
            u_mean: 0.0,
            u_std: 1.0,
            w_mean: 0.0,
            w_std: 1.0,
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.x_mean.iter().zip(&self.x_std)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(self.x_mean.iter().zip(&self.x_std)).map(|(v, (m, s))| v * s + m).collect()
    }
}

/// Intermediate values of one rollout, consumed by the reverse sweeps.
pub struct RolloutTape {
    /// Context states followed by the `L` predictions.
    pub states: Vec<Vec<f64>>,
    tapes: Vec<Tape>,
    context: usize,
}

impl RolloutTape {
    /// `x̂_{k+1}, …, x̂_{k+L}`.
    pub fn predictions(&self) -> &[Vec<f64>] {
        &self.states[self.context + 1..]
    }

    /// Current state `x_k` followed by the predictions.
    pub fn from_current(&self) -> &[Vec<f64>] {
        &self.states[self.context..]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateNet {
    pub format_version: u32,
    pub config: SurrogateConfig,
    pub state_dim: usize,
    pub norm: Normalization,
    pub mlp: Mlp,
}

impl SurrogateNet {
    pub fn new(config: SurrogateConfig, state_dim: usize, norm: Normalization) -> Result<Self> {
        config.validate()?;
        if norm.x_mean.len() != state_dim {
            return Err(SdoError::Config(format!(
                "normalization has {} features, state has {state_dim}",
                norm.x_mean.len()
            )));
        }
        let mut sizes = vec![(config.context + 1) * state_dim + 2];
        sizes.extend(&config.hidden);
        sizes.push(state_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mlp = Mlp::new(&sizes, config.activation, &mut rng, config.init_output_scale)?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            config,
            state_dim,
            norm,
            mlp,
        })
    }

    pub fn context(&self) -> usize {
        self.config.context
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn n_params(&self) -> usize {
        self.mlp.n_params()
    }

    fn check_context(&self, context: &[Vec<f64>]) -> Result<()> {
        if context.len() != self.context() + 1 {
            return Err(SdoError::Domain(format!(
                "context holds {} states, expected H + 1 = {}",
                context.len(),
                self.context() + 1
            )));
        }
        for (i, x) in context.iter().enumerate() {
            if x.len() != self.state_dim {
                return Err(SdoError::Domain(format!("context state {i} has length {}", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SdoError::NonFinite(format!("context state {i}")));
            }
        }
        Ok(())
    }

    fn encode(&self, window: &[Vec<f64>], u: f64, w: f64, out: &mut Vec<f64>) {
        out.clear();
        for x in window {
            out.extend(x.iter().zip(self.norm.x_mean.iter().zip(&self.norm.x_std)).map(|(v, (m, s))| (v - m) / s));
        }
        out.push((u - self.norm.u_mean) / self.norm.u_std);
        out.push((w - self.norm.w_mean) / self.norm.w_std);
    }

    pub fn predict_one(&self, context: &[Vec<f64>], u: f64, w: f64) -> Result<Vec<f64>> {
        Ok(self.rollout(context, &[u], &[w])?.pop().expect("one prediction"))
    }

    pub fn rollout(&self, context: &[Vec<f64>], u: &[f64], w: &[f64]) -> Result<Vec<Vec<f64>>> {
        let tape = self.rollout_taped(context, u, w)?;
        Ok(tape.predictions().to_vec())
    }

    pub fn rollout_taped(&self, context: &[Vec<f64>], u: &[f64], w: &[f64]) -> Result<RolloutTape> {
        self.check_context(context)?;
        if u.len() != w.len() {
            return Err(SdoError::Domain(format!("{} controls but {} loads", u.len(), w.len())));
        }
        if let Some(k) = u.iter().chain(w).position(|v| !v.is_finite()) {
            return Err(SdoError::NonFinite(format!("rollout input {k}")));
        }
        let h = self.context();
        let mut states = context.to_vec();
        let mut tapes = Vec::with_capacity(u.len());
        let mut input = Vec::with_capacity(self.input_dim());
        for l in 0..u.len() {
            self.encode(&states[l..l + h + 1], u[l], w[l], &mut input);
            let mut tape = Tape::default();
            self.mlp.forward(&input, &mut tape);
            let cur = &states[l + h];
            let next: Vec<f64> = cur
                .iter()
                .zip(tape.output().iter().zip(&self.norm.d_std))
                .map(|(x, (f, s))| x + s * f)
                .collect();
            if next.iter().any(|v| !v.is_finite()) {
                return Err(SdoError::NonFinite(format!("surrogate prediction at rollout step {l}")));
            }
            states.push(next);
            tapes.push(tape);
        }
        Ok(RolloutTape {
            states,
            tapes,
            context: h,
        })
    }

    /// Reverse sweep through a taped rollout. `d_pred[l]` is the adjoint of
    /// prediction `l`; returns `∂/∂u` and accumulates `∂/∂θ` into `d_params`.
    pub fn backward(&self, tape: &RolloutTape, d_pred: &[Vec<f64>], mut d_params: Option<&mut [f64]>) -> Vec<f64> {
        let h = self.context();
        let n = self.state_dim;
        let steps = tape.tapes.len();
        let mut adj = vec![vec![0.0; n]; h + 1 + steps];
        for (l, d) in d_pred.iter().enumerate() {
            adj[h + 1 + l].copy_from_slice(d);
        }
        let mut du = vec![0.0; steps];
        let mut d_in = vec![0.0; self.input_dim()];
        let mut d_f = vec![0.0; n];
        for l in (0..steps).rev() {
            let out = h + 1 + l;
            let (lower, upper) = adj.split_at_mut(out);
            let a_out = &upper[0];
            for j in 0..n {
                lower[out - 1][j] += a_out[j];
                d_f[j] = a_out[j] * self.norm.d_std[j];
            }
            self.mlp.backward(&tape.tapes[l], &d_f, d_params.as_deref_mut(), &mut d_in);
            for c in 0..=h {
                let target = &mut lower[l + c];
                for j in 0..n {
                    target[j] += d_in[c * n + j] / self.norm.x_std[j];
                }
            }
            du[l] = d_in[(h + 1) * n] / self.norm.u_std;
        }
        du
    }

    /// Gradient with respect to every control of a cost of the predicted
    /// states; `cost_grad` maps the predictions to their adjoints.
    pub fn input_gradient<F>(&self, context: &[Vec<f64>], u: &[f64], w: &[f64], cost_grad: F) -> Result<Vec<f64>>
    where
        F: FnOnce(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
    {
        let tape = self.rollout_taped(context, u, w)?;
        let d_pred = cost_grad(tape.predictions())?;
        if d_pred.len() != u.len() {
            return Err(SdoError::Domain("cost gradient length differs from the rollout".into()));
        }
        let du = self.backward(&tape, &d_pred, None);
        if let Some(k) = du.iter().position(|v| !v.is_finite()) {
            return Err(SdoError::NonFinite(format!("input gradient entry {k}")));
        }
        Ok(du)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| SdoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SdoError::io(path, e))?;
        let net: Self = serde_json::from_str(&text)?;
        if net.format_version != FORMAT_VERSION {
            return Err(SdoError::Config(format!(
                "surrogate file format {} is not supported (expected {FORMAT_VERSION})",
                net.format_version
            )));
        }
        let net = Self {
            mlp: Mlp::from_parts(net.mlp.sizes().to_vec(), net.mlp.activation(), net.mlp.params().to_vec())?,
            ..net
        };
        if net.mlp.input_dim() != (net.context() + 1) * net.state_dim + 2 || net.mlp.output_dim() != net.state_dim {
            return Err(SdoError::Config("surrogate layer sizes disagree with its state dimension".into()));
        }
        Ok(net)
    }
}

/// Physics prior on the differential rows: iodine and xenon discretized by
/// the trapezoid rule with power frozen over the interval, rod position by
/// the clamped integrator.
#[derive(Debug, Clone)]
pub struct PhysicsPrior {
    pub params: ModelParams,
    pub dt: f64,
    /// Divisor applied to each residual (length = state dimension).
    pub scale: Vec<f64>,
}

impl PhysicsPrior {
    /// Residuals measured in units of the typical one-step increment.
    pub fn new(params: ModelParams, dt: f64, norm: &Normalization) -> Self {
        Self {
            params,
            dt,
            scale: norm.d_std.clone(),
        }
    }

    fn residuals(&self, a: &[f64], b: &[f64], u: f64) -> Vec<f64> {
        let p = &self.params;
        let n = p.n_z;
        let dt = self.dt;
        let mut r = Vec::with_capacity(2 * n + 1);
        for j in 0..n {
            let (i0, i1, pw) = (a[j], b[j], a[2 * n + 1 + j]);
            r.push(((i1 - i0) - dt * (p.gamma_i * pw - p.lambda_i * 0.5 * (i0 + i1))) / self.scale[j]);
        }
        for j in 0..n {
            let (i0, i1) = (a[j], b[j]);
            let (x0, x1, pw) = (a[n + j], b[n + j], a[2 * n + 1 + j]);
            let src = p.gamma_x * pw + p.lambda_i * 0.5 * (i0 + i1);
            let sink = (p.lambda_x + p.sigma_x * pw) * 0.5 * (x0 + x1);
            r.push(((x1 - x0) - dt * (src - sink)) / self.scale[n + j]);
        }
        let h_pred = (a[2 * n] + u * dt).clamp(p.h_min, p.h_max);
        r.push((b[2 * n] - h_pred) / self.scale[2 * n]);
        r
    }

    fn terms(&self) -> usize {
        2 * self.params.n_z + 1
    }

    /// Mean squared residual over all transitions of `states` (length `u.len() + 1`).
    pub fn value(&self, states: &[Vec<f64>], u: &[f64]) -> f64 {
        let count = (u.len() * self.terms()) as f64;
        if count == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for (l, pair) in states.windows(2).enumerate() {
            acc += self.residuals(&pair[0], &pair[1], u[l]).iter().map(|r| r * r).sum::<f64>();
        }
        acc / count
    }

    /// Value and adjoint with respect to every state in `states`.
    pub fn value_and_grad(&self, states: &[Vec<f64>], u: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let p = &self.params;
        let n = p.n_z;
        let dt = self.dt;
        let mut grad = vec![vec![0.0; states[0].len()]; states.len()];
        let count = (u.len() * self.terms()) as f64;
        if count == 0.0 {
            return (0.0, grad);
        }
        let mut acc = 0.0;
        for l in 0..u.len() {
            let (a, b) = (&states[l], &states[l + 1]);
            let r = self.residuals(a, b, u[l]);
            acc += r.iter().map(|v| v * v).sum::<f64>();
            let c = 2.0 / count;
            let (ga, gb) = {
                let (lo, hi) = grad.split_at_mut(l + 1);
                (&mut lo[l], &mut hi[0])
            };
            for j in 0..n {
                let e = c * r[j] / self.scale[j];
                gb[j] += e * (1.0 + dt * p.lambda_i * 0.5);
                ga[j] += e * (-1.0 + dt * p.lambda_i * 0.5);
                ga[2 * n + 1 + j] -= e * dt * p.gamma_i;
            }
            for j in 0..n {
                let e = c * r[n + j] / self.scale[n + j];
                let pw = a[2 * n + 1 + j];
                let k = p.lambda_x + p.sigma_x * pw;
                gb[n + j] += e * (1.0 + dt * k * 0.5);
                ga[n + j] += e * (-1.0 + dt * k * 0.5);
                gb[j] -= e * dt * p.lambda_i * 0.5;
                ga[j] -= e * dt * p.lambda_i * 0.5;
                ga[2 * n + 1 + j] -= e * dt * (p.gamma_x - p.sigma_x * 0.5 * (a[n + j] + b[n + j]));
            }
            let e = c * r[2 * n] / self.scale[2 * n];
            gb[2 * n] += e;
            let raw = a[2 * n] + u[l] * dt;
            if raw > p.h_min && raw < p.h_max {
                ga[2 * n] -= e;
            }
        }
        (acc / count, grad)
    }
}

/// Window of a sequence used by the training loss: context ends at `k`,
/// targets are `x_{k+1..k+L}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub seq: usize,
    pub k: usize,
}

pub fn windows(data: &[Sequence], context: usize, rollout: usize, stride: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (i, s) in data.iter().enumerate() {
        let t = s.steps();
        if t < context + rollout {
            continue;
        }
        let mut k = context;
        while k + rollout <= t {
            out.push(Window { seq: i, k });
            k += stride.max(1);
        }
    }
    out
}

/// Loss pieces of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub prediction: f64,
    pub one_step: f64,
    pub regularizer: f64,
    pub total: f64,
}

impl SurrogateNet {
    fn window_context(&self, seq: &Sequence, k: usize) -> Vec<Vec<f64>> {
        seq.states[k - self.context()..=k].to_vec()
    }

    /// Mean normalized squared error over a window, its first-step part, and
    /// (when requested) adjoints of the predictions.
    fn window_loss(&self, tape: &RolloutTape, targets: &[Vec<f64>], want_grad: bool) -> (f64, f64, Vec<Vec<f64>>) {
        let n = self.state_dim;
        let steps = targets.len();
        let c = 1.0 / (steps * n) as f64;
        let mut loss = 0.0;
        let mut first = 0.0;
        let mut grad = Vec::new();
        for (l, (pred, tgt)) in tape.predictions().iter().zip(targets).enumerate() {
            let mut g = if want_grad { vec![0.0; n] } else { Vec::new() };
            let mut se = 0.0;
            for j in 0..n {
                let s = self.norm.x_std[j];
                let e = (pred[j] - tgt[j]) / s;
                se += e * e;
                if want_grad {
                    g[j] = 2.0 * c * e / s;
                }
            }
            if l == 0 {
                first = se / n as f64;
            }
            loss += c * se;
            if want_grad {
                grad.push(g);
            }
        }
        (loss, first, grad)
    }

    /// Batch loss `mean window error + λ R`, with its
    /// parameter gradient when `grad` is given.
    pub fn batch_loss(
        &self,
        data: &[Sequence],
        batch: &[Window],
        prior: Option<&PhysicsPrior>,
        mut grad: Option<&mut [f64]>,
    ) -> Result<LossParts> {
        let cfg = &self.config;
        let l_len = cfg.rollout;
        let bsz = batch.len().max(1) as f64;
        let use_physics = cfg.reg_kind == RegKind::PhysicsResidual && cfg.lambda > 0.0;
        if use_physics && prior.is_none() {
            return Err(SdoError::Config("physics-residual regularization needs model parameters".into()));
        }
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut pred_loss = 0.0;
        let mut one_step = 0.0;
        let mut phys = 0.0;
        for win in batch {
            let seq = &data[win.seq];
            let ctx = self.window_context(seq, win.k);
            let u = &seq.u[win.k..win.k + l_len];
            let w = &seq.w[win.k..win.k + l_len];
            let tape = self.rollout_taped(&ctx, u, w)?;
            let targets = &seq.states[win.k + 1..=win.k + l_len];
            let (loss, first, mut d_pred) = self.window_loss(&tape, targets, grad.is_some());
            pred_loss += loss / bsz;
            one_step += first / bsz;
            if use_physics {
                let prior = prior.expect("checked above");
                if grad.is_some() {
                    let (v, g) = prior.value_and_grad(tape.from_current(), u);
                    phys += v / bsz;
                    for (d, gl) in d_pred.iter_mut().zip(&g[1..]) {
                        for (a, b) in d.iter_mut().zip(gl) {
                            *a += cfg.lambda * b;
                        }
                    }
                } else {
                    phys += prior.value(tape.from_current(), u) / bsz;
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                for d in d_pred.iter_mut() {
                    d.iter_mut().for_each(|v| *v /= bsz);
                }
                self.backward(&tape, &d_pred, Some(g));
            }
        }
        let regularizer = match cfg.reg_kind {
            RegKind::WeightDecay => {
                if cfg.lambda > 0.0 {
                    if let Some(g) = grad.as_deref_mut() {
                        self.mlp.add_weight_decay_grad(cfg.lambda, g);
                    }
                }
                self.mlp.weight_sq_norm()
            }
            RegKind::PhysicsResidual => phys,
        };
        let total = pred_loss + cfg.lambda * regularizer;
        Ok(LossParts {
            prediction: pred_loss,
            one_step,
            regularizer,
            total,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_one_step_mse: f64,
    pub val_rollout_mse: f64,
    /// Validation rollout MSE of the best snapshot so far.
    pub best_val_rollout_mse: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub train_sequences: usize,
    pub val_sequences: usize,
}

impl TrainRecord {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn write_csv(&self, path: &Path, prov: Option<&crate::io::Provenance>) -> Result<()> {
        crate::io::write_rows(path, &self.epochs, prov)
    }
}

const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Random train/validation split of sequence indices; both sides non-empty
/// whenever `count >= 2`.
pub fn split_indices(count: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    idx.shuffle(&mut rng);
    if count < 2 {
        return (idx, Vec::new());
    }
    let n_train = ((count as f64 * train_fraction).round() as usize).clamp(1, count - 1);
    let val = idx.split_off(n_train);
    (idx, val)
}

/// What the training callback sees after each epoch.
pub struct Checkpoint<'a> {
    pub record: &'a EpochRecord,
    /// Best-validation snapshot so far.
    pub best: &'a SurrogateNet,
}

/// Trains a surrogate on `data` and returns the best-validation snapshot.
/// `on_epoch` runs after every epoch (including the untrained epoch 0) and
/// may stop training early by returning `false`.
pub fn train_with<F>(
    data: &[Sequence],
    config: &SurrogateConfig,
    prior: Option<&PhysicsPrior>,
    mut on_epoch: F,
) -> Result<(SurrogateNet, TrainRecord)>
where
    F: FnMut(Checkpoint<'_>) -> bool,
{
    config.validate()?;
    let (h, l_len) = (config.context, config.rollout);
    if data.len() < 2 {
        return Err(SdoError::Dataset(format!("need at least 2 sequences, got {}", data.len())));
    }
    if let Some((i, s)) = data.iter().enumerate().find(|(_, s)| s.steps() < h + l_len || s.states.len() != s.steps() + 1) {
        return Err(SdoError::Dataset(format!(
            "sequence {i} has {} steps, shorter than H + L = {} or inconsistent",
            s.steps(),
            h + l_len
        )));
    }
    let (train_idx, val_idx) = split_indices(data.len(), config.train_fraction, config.seed);
    let train: Vec<Sequence> = train_idx.iter().map(|&i| data[i].clone()).collect();
    let val: Vec<Sequence> = val_idx.iter().map(|&i| data[i].clone()).collect();
    let norm = Normalization::fit(&train)?;
    let state_dim = train[0].states[0].len();
    let mut net = SurrogateNet::new(config.clone(), state_dim, norm)?;
    let train_windows = windows(&train, h, l_len, 1);
    let val_windows = windows(&val, h, l_len, config.val_stride);
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(SdoError::Dataset("no complete training or validation windows".into()));
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
        net.n_params(),
    );
    let mut grad = vec![0.0; net.n_params()];
    let mut record = TrainRecord {
        train_sequences: train.len(),
        val_sequences: val.len(),
        ..TrainRecord::default()
    };

    let validate = |net: &SurrogateNet| -> Result<(f64, f64)> {
        let parts = net.batch_loss(&val, &val_windows, prior, None)?;
        Ok((parts.one_step, parts.prediction))
    };
    let (v1, vl) = validate(&net)?;
    let initial = net.batch_loss(&train, &train_windows[..train_windows.len().min(4 * config.batch_size)], prior, None)?;
    let mut best = net.clone();
    let mut best_val = vl;
    let mut since_best = 0;
    record.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: initial.total,
        val_one_step_mse: v1,
        val_rollout_mse: vl,
        best_val_rollout_mse: vl,
        wall_time_s: start.elapsed().as_secs_f64(),
    });
    if !on_epoch(Checkpoint {
        record: record.epochs.last().expect("just pushed"),
        best: &best,
    }) {
        return Ok((best, record));
    }

    let mut order = train_windows.clone();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let take = if config.windows_per_epoch == 0 {
            order.len()
        } else {
            config.windows_per_epoch.min(order.len())
        };
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in order[..take].chunks(config.batch_size) {
            let parts = net.batch_loss(&train, batch, prior, Some(&mut grad))?;
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(SdoError::Divergence {
                    epoch,
                    reason: format!("training loss {}", parts.total),
                });
            }
            adam.step(net.mlp.params_mut(), &grad)?;
            loss_sum += parts.total;
            batches += 1;
        }
        let (v1, vl) = validate(&net)?;
        if !vl.is_finite() {
            return Err(SdoError::Divergence {
                epoch,
                reason: format!("validation rollout MSE {vl}"),
            });
        }
        if vl < best_val {
            best_val = vl;
            best = net.clone();
            record.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        record.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches.max(1) as f64,
            val_one_step_mse: v1,
            val_rollout_mse: vl,
            best_val_rollout_mse: best_val,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: train {:.3e} val {:.3e} (1-step {:.3e})", loss_sum / batches.max(1) as f64, vl, v1);
        let go_on = on_epoch(Checkpoint {
            record: record.epochs.last().expect("just pushed"),
            best: &best,
        });
        if !go_on || since_best >= config.patience {
            break;
        }
    }
    Ok((best, record))
}

pub fn train(data: &[Sequence], config: &SurrogateConfig, prior: Option<&PhysicsPrior>) -> Result<(SurrogateNet, TrainRecord)> {
    train_with(data, config, prior, |_| true)
}

/// Physics prior in the normalization that `train` will fit on `data`, or
/// `None` when the configuration does not use the physics regularizer.
pub fn prior_for(data: &[Sequence], config: &SurrogateConfig, params: &ModelParams, dt: f64) -> Result<Option<PhysicsPrior>> {
    if config.reg_kind != RegKind::PhysicsResidual || config.lambda == 0.0 {
        return Ok(None);
    }
    let (train_idx, _) = split_indices(data.len(), config.train_fraction, config.seed);
    let train: Vec<Sequence> = train_idx.iter().map(|&i| data[i].clone()).collect();
    let norm = Normalization::fit(&train)?;
    Ok(Some(PhysicsPrior::new(params.clone(), dt, &norm)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_net(state_dim: usize, hidden: usize, context: usize, seed: u64) -> SurrogateNet {
        let cfg = SurrogateConfig {
            context,
            rollout: 3,
            hidden: vec![hidden],
            seed,
            init_output_scale: 1.0,
            ..SurrogateConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let norm = Normalization {
            x_mean: (0..state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            x_std: (0..state_dim).map(|_| rng.gen_range(0.5..2.0)).collect(),
            d_std: (0..state_dim).map(|_| rng.gen_range(0.1..1.0)).collect(),
            u_mean: 0.1,
            u_std: 0.7,
            w_mean: 0.5,
            w_std: 0.3,
        };
        let mut net = SurrogateNet::new(cfg, state_dim, norm).unwrap();
        for p in net.mlp.params_mut() {
            *p += rng.gen_range(-0.3..0.3);
        }
        net
    }

    fn random_states(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..count).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn normalization_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seqs: Vec<Sequence> = (0..3)
            .map(|_| Sequence {
                states: random_states(4, 6, &mut rng),
                u: vec![0.1, 0.2, -0.3, 0.0, 0.05],
                w: vec![0.9, 0.8, 0.7, 0.7, 0.7],
            })
            .collect();
        let norm = Normalization::fit(&seqs).unwrap();
        for x in &seqs[1].states {
            let back = norm.denormalize(&norm.normalize(x));
            for (a, b) in back.iter().zip(x) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_layer_is_identity() {
        let mut net = toy_net(21, 8, 1, 2);
        net.mlp.zero_output_layer();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ctx = random_states(21, 2, &mut rng);
        let next = net.predict_one(&ctx, 0.01, 0.8).unwrap();
        assert_eq!(next.len(), 21);
        assert_eq!(next, ctx[1]);
        let roll = net.rollout(&ctx, &[0.1; 5], &[0.5; 5]).unwrap();
        assert!(roll.iter().all(|x| x == &ctx[1]));
    }

    #[test]
    fn rollout_recursion() {
        let net = toy_net(3, 4, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ctx = random_states(3, 3, &mut rng);
        let u = [0.1, -0.2, 0.3, 0.05, -0.1];
        let w = [0.9, 0.8, 0.85, 0.7, 0.6];
        let full = net.rollout(&ctx, &u, &w).unwrap();
        assert_eq!(net.rollout(&ctx, &u[..1], &w[..1]).unwrap()[0], net.predict_one(&ctx, u[0], w[0]).unwrap());
        let head = net.rollout(&ctx, &u[..2], &w[..2]).unwrap();
        let mut carried = ctx.clone();
        carried.extend(head.iter().cloned());
        let carried = carried[carried.len() - 3..].to_vec();
        let tail = net.rollout(&carried, &u[2..], &w[2..]).unwrap();
        assert_eq!(&full[..2], &head[..]);
        assert_eq!(&full[2..], &tail[..]);
    }

    #[test]
    fn wrong_context_is_rejected() {
        let net = toy_net(3, 4, 1, 6);
        assert!(net.predict_one(&[vec![0.0; 3]], 0.0, 0.5).is_err());
        assert!(net.predict_one(&[vec![0.0; 3], vec![f64::NAN, 0.0, 0.0]], 0.0, 0.5).is_err());
    }

    fn cost(pred: &[Vec<f64>], c: &[Vec<f64>]) -> f64 {
        pred.iter().zip(c).map(|(p, c)| p.iter().zip(c).map(|(a, b)| a * b + 0.5 * a * a * b).sum::<f64>()).sum()
    }

    fn cost_grad(pred: &[Vec<f64>], c: &[Vec<f64>]) -> Vec<Vec<f64>> {
        pred.iter().zip(c).map(|(p, c)| p.iter().zip(c).map(|(a, b)| b + a * b).collect()).collect()
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let net = toy_net(4, 6, 1, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ctx = random_states(4, 2, &mut rng);
        let c = random_states(4, 5, &mut rng);
        let u: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let w = vec![0.7; 5];
        let g = net.input_gradient(&ctx, &u, &w, |p| Ok(cost_grad(p, &c))).unwrap();
        let h = 1e-6;
        for k in 0..5 {
            let mut up = u.clone();
            up[k] += h;
            let mut um = u.clone();
            um[k] -= h;
            let fd = (cost(&net.rollout(&ctx, &up, &w).unwrap(), &c) - cost(&net.rollout(&ctx, &um, &w).unwrap(), &c)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(1e-3), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn dead_paths_give_zero_input_gradient() {
        let net = toy_net(3, 4, 1, 9);
        let ctx = vec![vec![0.1, 0.2, 0.3]; 2];
        let g = net.input_gradient(&ctx, &[0.1; 4], &[0.5; 4], |p| Ok(vec![vec![0.0; 3]; p.len()])).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        let mut ident = net.clone();
        ident.mlp.zero_output_layer();
        let g = ident
            .input_gradient(&ctx, &[0.1; 4], &[0.5; 4], |p| {
                let mut d = vec![vec![0.0; 3]; p.len()];
                d[p.len() - 1] = vec![1.0, -2.0, 0.5];
                Ok(d)
            })
            .unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    fn pwr_like_prior(n_z: usize) -> PhysicsPrior {
        let params = ModelParams::for_nodes(n_z);
        PhysicsPrior {
            params,
            dt: 600.0,
            scale: vec![0.01; 3 * n_z + 3],
        }
    }

    #[test]
    fn physics_residual_properties() {
        let prior = pwr_like_prior(2);
        // I = 0 while P > 0, so the iodine row cannot be stationary
        let mut x = vec![0.0; 9];
        x[5] = 0.5;
        x[6] = 0.5;
        let two = vec![x.clone(); 3];
        let four = vec![x.clone(); 5];
        let v2 = prior.value(&two, &[0.0; 2]);
        let v4 = prior.value(&four, &[0.0; 4]);
        assert!(v2 > 0.0);
        assert!((v2 - v4).abs() <= 1e-15 * v2);
    }

    #[test]
    fn physics_residual_gradient_matches_central_differences() {
        let prior = pwr_like_prior(2);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut states = random_states(9, 4, &mut rng);
        for s in &mut states {
            s[4] = 500.0 + 100.0 * s[4];
        }
        let u = [0.01, -0.02, 0.03];
        let (v, g) = prior.value_and_grad(&states, &u);
        assert!((v - prior.value(&states, &u)).abs() < 1e-15 * v.max(1.0));
        // the residual is quadratic in the states away from the rod clamp
        let h = 1e-3;
        for i in 0..states.len() {
            for j in 0..9 {
                let mut sp = states.clone();
                sp[i][j] += h;
                let mut sm = states.clone();
                sm[i][j] -= h;
                let fd = (prior.value(&sp, &u) - prior.value(&sm, &u)) / (2.0 * h);
                assert!((fd - g[i][j]).abs() <= 1e-6 * fd.abs().max(1.0), "({i},{j}): {fd} vs {}", g[i][j]);
            }
        }
    }

    fn toy_data(n: usize, count: usize, steps: usize, seed: u64) -> Vec<Sequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let mut states = random_states(n, 1, &mut rng);
                let u: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let w: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.3..1.0)).collect();
                for k in 0..steps {
                    let x = states[k].clone();
                    states.push(x.iter().map(|v| 0.9 * v + 0.1 * u[k] - 0.05 * w[k]).collect());
                }
                Sequence { states, u, w }
            })
            .collect()
    }

    #[test]
    fn weight_decay_off_leaves_prediction_loss() {
        let data = toy_data(3, 4, 10, 11);
        let net = toy_net(3, 4, 1, 12);
        let wins = windows(&data, 1, 3, 1);
        let parts = net.batch_loss(&data, &wins, None, None).unwrap();
        assert_eq!(parts.total, parts.prediction);
    }

    #[test]
    fn parameter_gradient_matches_central_differences() {
        let data = toy_data(9, 3, 8, 13);
        for (reg, lambda) in [(RegKind::WeightDecay, 0.3), (RegKind::PhysicsResidual, 0.2)] {
            let mut net = toy_net(9, 2, 1, 14);
            net.config.reg_kind = reg;
            net.config.lambda = lambda;
            let prior = pwr_like_prior(2);
            let wins = windows(&data, 1, 3, 2);
            let mut g = vec![0.0; net.n_params()];
            net.batch_loss(&data, &wins, Some(&prior), Some(&mut g)).unwrap();
            let h = 1e-6;
            for i in 0..net.n_params() {
                let mut np = net.clone();
                np.mlp.params_mut()[i] += h;
                let mut nm = net.clone();
                nm.mlp.params_mut()[i] -= h;
                let fp = np.batch_loss(&data, &wins, Some(&prior), None).unwrap().total;
                let fm = nm.batch_loss(&data, &wins, Some(&prior), None).unwrap().total;
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1e-4), "{reg:?} param {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn physics_regularizer_requires_prior() {
        let data = toy_data(9, 2, 6, 15);
        let mut net = toy_net(9, 2, 1, 16);
        net.config.reg_kind = RegKind::PhysicsResidual;
        net.config.lambda = 1.0;
        let wins = windows(&data, 1, 3, 1);
        assert!(matches!(net.batch_loss(&data, &wins, None, None), Err(SdoError::Config(_))));
    }

    #[test]
    fn windows_cover_valid_range() {
        let data = toy_data(2, 2, 10, 17);
        let w = windows(&data, 2, 3, 1);
        // k in [2, 7] for each sequence
        assert_eq!(w.len(), 12);
        assert!(w.iter().all(|w| w.k >= 2 && w.k + 3 <= 10));
        assert_eq!(windows(&data, 2, 3, 4).len(), 4);
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let (tr, va) = split_indices(10, 0.8, 3);
        assert_eq!((tr.len(), va.len()), (8, 2));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, 0.8, 3), (tr, va));
        let (tr, va) = split_indices(2, 0.99, 0);
        assert_eq!((tr.len(), va.len()), (1, 1));
    }

    #[test]
    fn short_dataset_is_rejected() {
        let data = toy_data(2, 3, 4, 18);
        let cfg = SurrogateConfig {
            rollout: 5,
            ..SurrogateConfig::default()
        };
        assert!(matches!(train(&data, &cfg, None), Err(SdoError::Dataset(_))));
    }

    #[test]
    fn save_and_load_round_trip() {
        let net = toy_net(3, 4, 1, 19);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        net.save(&path).unwrap();
        assert_eq!(SurrogateNet::load(&path).unwrap(), net);
    }
}
