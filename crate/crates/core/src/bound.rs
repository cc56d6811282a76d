//! Empirical check of the surrogate-optimum distance and objective-gap
//! bounds on synthetic linear-quadratic problems whose constants are known.
//!
//! The true rollout is `X(u) = G u + c`; the surrogate rollout adds an affine
//! gap `E u + e` whose largest Euclidean norm over the box is exactly `M`.
//! Both problems minimize `½ XᵀQX + ½ r uᵀu` over the box.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoError};

#[derive(Debug, Clone)]
pub struct QuadraticInstance {
    pub dims: usize,
    pub nx: usize,
    pub lo: f64,
    pub hi: f64,
    /// Rollout response `∂X/∂u` and free response.
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
    /// Surrogate gap `δ(u) = E u + e`.
    pub gap_matrix: DMatrix<f64>,
    pub gap_offset: DVector<f64>,
    pub q: DVector<f64>,
    pub r: f64,
    pub m: f64,
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Corners of `[lo, hi]^dims`.
fn vertices(dims: usize, lo: f64, hi: f64) -> impl Iterator<Item = DVector<f64>> {
    (0..1usize << dims).map(move |mask| DVector::from_fn(dims, |i, _| if mask >> i & 1 == 1 { hi } else { lo }))
}

/// Stacked rollout of `x+ = A x + B u` over `dims` steps as `(G, c)`.
fn rollout_map(a: &DMatrix<f64>, b: &DVector<f64>, x0: &DVector<f64>, dims: usize) -> (DMatrix<f64>, DVector<f64>) {
    let nx = x0.len();
    let mut g = DMatrix::zeros(nx * dims, dims);
    let mut c = DVector::zeros(nx * dims);
    let mut x = x0.clone();
    for k in 0..dims {
        x = a * &x;
        c.rows_mut(k * nx, nx).copy_from(&x);
    }
    for j in 0..dims {
        let mut e = b.clone();
        for k in j..dims {
            g.view_mut((k * nx, j), (nx, 1)).copy_from(&e);
            e = a * &e;
        }
    }
    (g, c)
}

impl QuadraticInstance {
    /// Random stable system with `dims` controls and a gap of exactly
    /// `m_target` (zero gap when `m_target == 0`).
    pub fn random(rng: &mut ChaCha8Rng, dims: usize, m_target: f64) -> Result<Self> {
        if dims == 0 || dims > 12 {
            return Err(SdoError::Config(format!("instance dimension {dims} outside 1..=12")));
        }
        if !(m_target >= 0.0) || !m_target.is_finite() {
            return Err(SdoError::Config(format!("gap target {m_target} must be finite and >= 0")));
        }
        let nx = rng.gen_range(1..=3);
        let mut a = normal_matrix(rng, nx, nx);
        let norm = a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        a *= rng.gen_range(0.3..0.9) / norm.max(1e-12);
        let b = normal_vector(rng, nx);
        let x0 = normal_vector(rng, nx);
        let (g, c) = rollout_map(&a, &b, &x0, dims);
        let q = DVector::from_fn(nx * dims, |_, _| rng.gen_range(0.5..2.0));
        let r = rng.gen_range(0.05..0.5);
        let half = rng.gen_range(0.5..2.0);
        let mut gap_matrix = normal_matrix(rng, nx * dims, dims) * 0.3;
        let mut gap_offset = normal_vector(rng, nx * dims);
        let worst = vertices(dims, -half, half)
            .map(|v| (&gap_matrix * v + &gap_offset).norm())
            .fold(0.0, f64::max);
        let s = if m_target == 0.0 { 0.0 } else { m_target / worst };
        gap_matrix *= s;
        gap_offset *= s;
        Ok(Self {
            dims,
            nx,
            lo: -half,
            hi: half,
            g,
            c,
            gap_matrix,
            gap_offset,
            q,
            r,
            m: m_target,
        })
    }

    /// Same system and cost with the gap rescaled to `m` (the gap direction
    /// is kept).
    pub fn with_gap(&self, m: f64) -> Self {
        let worst = self.max_vertex_gap();
        let s = if worst == 0.0 { 0.0 } else { m / worst };
        Self {
            gap_matrix: &self.gap_matrix * s,
            gap_offset: &self.gap_offset * s,
            m,
            ..self.clone()
        }
    }

    pub fn rollout(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.g * u + &self.c
    }

    pub fn surrogate_rollout(&self, u: &DVector<f64>) -> DVector<f64> {
        self.rollout(u) + &self.gap_matrix * u + &self.gap_offset
    }

    fn cost_of(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * x.iter().zip(self.q.iter()).map(|(v, q)| q * v * v).sum::<f64>() + 0.5 * self.r * u.norm_squared()
    }

    pub fn cost(&self, u: &DVector<f64>) -> f64 {
        self.cost_of(&self.rollout(u), u)
    }

    pub fn surrogate_cost(&self, u: &DVector<f64>) -> f64 {
        self.cost_of(&self.surrogate_rollout(u), u)
    }

    fn quadratic(&self, g: &DMatrix<f64>, c: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let qg = DMatrix::from_diagonal(&self.q) * g;
        let h = g.transpose() * &qg + DMatrix::identity(self.dims, self.dims) * self.r;
        let f = qg.transpose() * c;
        (h, f)
    }

    /// Hessian and linear term of the true objective.
    pub fn true_quadratic(&self) -> (DMatrix<f64>, DVector<f64>) {
        self.quadratic(&self.g, &self.c)
    }

    pub fn surrogate_quadratic(&self) -> (DMatrix<f64>, DVector<f64>) {
        self.quadratic(&(&self.g + &self.gap_matrix), &(&self.c + &self.gap_offset))
    }

    /// Strong-convexity modulus of the true objective.
    pub fn mu(&self) -> f64 {
        let (h, _) = self.true_quadratic();
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest gap norm over the box corners (the maximum of a convex
    /// function over a box).
    pub fn max_vertex_gap(&self) -> f64 {
        vertices(self.dims, self.lo, self.hi)
            .map(|v| (&self.gap_matrix * v + &self.gap_offset).norm())
            .fold(0.0, f64::max)
    }

    /// Largest gap norm over `samples` uniform draws and all corners.
    pub fn sampled_gap(&self, rng: &mut ChaCha8Rng, samples: usize) -> f64 {
        let mut worst = self.max_vertex_gap();
        for _ in 0..samples {
            let u = DVector::from_fn(self.dims, |_, _| rng.gen_range(self.lo..=self.hi));
            worst = worst.max((&self.gap_matrix * u + &self.gap_offset).norm());
        }
        worst
    }

    /// Upper bound on `‖∇_X ½XᵀQX‖` over every trajectory either rollout can
    /// produce on the box, and the segments between them: componentwise
    /// interval hull, then the norm of the largest corner.
    pub fn k_j(&self) -> f64 {
        let centre = DVector::from_element(self.dims, 0.5 * (self.lo + self.hi));
        let half = 0.5 * (self.hi - self.lo);
        let interval = |g: &DMatrix<f64>, c: &DVector<f64>| -> Vec<(f64, f64)> {
            let mid = g * &centre + c;
            (0..c.len())
                .map(|i| {
                    let rad = half * g.row(i).iter().map(|v| v.abs()).sum::<f64>();
                    (mid[i] - rad, mid[i] + rad)
                })
                .collect()
        };
        let t = interval(&self.g, &self.c);
        let s = interval(&(&self.g + &self.gap_matrix), &(&self.c + &self.gap_offset));
        t.iter()
            .zip(&s)
            .zip(self.q.iter())
            .map(|(((a0, a1), (b0, b1)), q)| {
                let m = a0.min(*b0).abs().max(a1.max(*b1).abs());
                (q * m).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Exact minimizer of `½ uᵀHu + fᵀu` over `[lo, hi]^n` for positive-definite
/// `H`, by enumerating the `3^n` active sets and keeping the one that
/// satisfies the KKT conditions.
pub fn box_qp(h: &DMatrix<f64>, f: &DVector<f64>, lo: f64, hi: f64) -> Result<DVector<f64>> {
    let n = f.len();
    if n > 12 {
        return Err(SdoError::Config(format!("active-set enumeration limited to 12 variables, got {n}")));
    }
    let tol = 1e-10 * (1.0 + h.amax() * hi.abs().max(lo.abs()) + f.amax());
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut state = vec![0u8; n];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let mut u = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        for i in 0..n {
            match state[i] {
                1 => u[i] = lo,
                2 => u[i] = hi,
                _ => {}
            }
        }
        if !free.is_empty() {
            let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_fn(free.len(), |a, _| {
                let i = free[a];
                -f[i] - (0..n).filter(|j| state[*j] != 0).map(|j| h[(i, j)] * u[j]).sum::<f64>()
            });
            let Some(sol) = hf.cholesky().map(|ch| ch.solve(&rhs)) else {
                continue;
            };
            for (a, &i) in free.iter().enumerate() {
                u[i] = sol[a];
            }
        }
        let grad = h * &u + f;
        let kkt = (0..n).all(|i| match state[i] {
            0 => u[i] >= lo - tol && u[i] <= hi + tol,
            1 => grad[i] >= -tol,
            _ => grad[i] <= tol,
        });
        if kkt {
            let clipped = u.map(|v| v.clamp(lo, hi));
            let val = 0.5 * clipped.dot(&(h * &clipped)) + f.dot(&clipped);
            if best.as_ref().map_or(true, |(b, _)| val < *b) {
                best = Some((val, clipped));
            }
        }
    }
    best.map(|(_, u)| u)
        .ok_or_else(|| SdoError::Domain("no active set satisfies the KKT conditions".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub dims: usize,
    pub m: f64,
    pub mu: f64,
    pub k_j: f64,
    /// `‖u* - û‖` and its bound `2 √(K_J M / μ)`.
    pub distance: f64,
    pub distance_bound: f64,
    /// `J(û) - J(u*)` and its bound `2 K_J M`.
    pub objective_gap: f64,
    pub objective_bound: f64,
    pub distance_ok: bool,
    pub objective_ok: bool,
}

impl BoundCheck {
    pub fn passed(&self) -> bool {
        self.distance_ok && self.objective_ok
    }

    pub fn distance_margin(&self) -> f64 {
        self.distance_bound - self.distance
    }

    /// Measured distance over its bound (tightness).
    pub fn distance_ratio(&self) -> f64 {
        if self.distance_bound > 0.0 {
            self.distance / self.distance_bound
        } else {
            0.0
        }
    }
}

/// Minimizers of both problems plus both inequalities.
pub fn check_bounds(inst: &QuadraticInstance) -> Result<(DVector<f64>, DVector<f64>, BoundCheck)> {
    let (h, f) = inst.true_quadratic();
    let (hs, fs) = inst.surrogate_quadratic();
    let u_star = box_qp(&h, &f, inst.lo, inst.hi)?;
    let u_hat = box_qp(&hs, &fs, inst.lo, inst.hi)?;
    let mu = inst.mu();
    if !(mu > 0.0) {
        return Err(SdoError::Domain(format!("objective is not strongly convex (mu = {mu})")));
    }
    let k_j = inst.k_j();
    let distance = (&u_star - &u_hat).norm();
    let distance_bound = 2.0 * (k_j * inst.m / mu).sqrt();
    let objective_gap = inst.cost(&u_hat) - inst.cost(&u_star);
    let objective_bound = 2.0 * k_j * inst.m;
    // roundoff allowance for the M = 0 case
    let slack = 1e-12 * (1.0 + inst.cost(&u_star).abs());
    let check = BoundCheck {
        dims: inst.dims,
        m: inst.m,
        mu,
        k_j,
        distance,
        distance_bound,
        objective_gap,
        objective_bound,
        distance_ok: distance <= distance_bound + 1e-12,
        objective_ok: objective_gap <= objective_bound + slack,
    };
    Ok((u_star, u_hat, check))
}

/// Random instances with dimensions drawn from `1..=max_dims` and gaps
/// drawn from `[0, m_max]` (every `zero_every`-th instance has `M = 0`).
pub fn run_checks(
    rng: &mut ChaCha8Rng,
    count: usize,
    max_dims: usize,
    m_max: f64,
    zero_every: usize,
) -> Result<Vec<BoundCheck>> {
    (0..count)
        .map(|i| {
            let dims = rng.gen_range(1..=max_dims.max(1));
            let m = if zero_every > 0 && i % zero_every == 0 {
                0.0
            } else {
                rng.gen_range(0.0..=m_max)
            };
            check_bounds(&QuadraticInstance::random(rng, dims, m)?).map(|(_, _, c)| c)
        })
        .collect()
}

/// Offset-only gap aligned with the direction that moves the unconstrained
/// minimizer the most, on a box wide enough to keep both optima interior.
pub fn adversarial_instance(rng: &mut ChaCha8Rng, dims: usize, m: f64) -> Result<QuadraticInstance> {
    let mut inst = QuadraticInstance::random(rng, dims, 0.0)?;
    let (h, _) = inst.true_quadratic();
    let h_inv = h.clone().try_inverse().ok_or_else(|| SdoError::Domain("singular Hessian".into()))?;
    let shift = &h_inv * inst.g.transpose() * DMatrix::from_diagonal(&inst.q);
    let svd = shift.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| SdoError::Domain("SVD failed".into()))?;
    let (k, _) = svd.singular_values.argmax();
    let dir = v_t.row(k).transpose();
    inst.gap_matrix = DMatrix::zeros(inst.nx * dims, dims);
    inst.gap_offset = dir * m;
    inst.m = m;
    let (_, f) = inst.true_quadratic();
    let (_, fs) = inst.surrogate_quadratic();
    let reach = (h_inv.clone() * &f).amax().max((h_inv * &fs).amax());
    inst.lo = -(2.0 * reach + 1.0);
    inst.hi = 2.0 * reach + 1.0;
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn rollout_map_matches_direct_simulation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
        let b = DVector::from_vec(vec![1.0, -0.5]);
        let x0 = DVector::from_vec(vec![0.3, 0.7]);
        let (g, c) = rollout_map(&a, &b, &x0, 3);
        let u = DVector::from_vec(vec![0.2, -1.0, 0.4]);
        let mut x = x0;
        let mut stacked = Vec::new();
        for k in 0..3 {
            x = &a * &x + &b * u[k];
            stacked.extend(x.iter().copied());
        }
        let direct = DVector::from_vec(stacked);
        assert!((g * u + c - direct).amax() < 1e-15);
    }

    #[test]
    fn box_qp_against_grid() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let f = DVector::from_vec(vec![-3.0, 1.0]);
        let u = box_qp(&h, &f, -1.0, 1.0).unwrap();
        let val = |x: f64, y: f64| {
            let v = DVector::from_vec(vec![x, y]);
            0.5 * v.dot(&(&h * &v)) + f.dot(&v)
        };
        let best = val(u[0], u[1]);
        for i in 0..=200 {
            for j in 0..=200 {
                let (x, y) = (-1.0 + i as f64 / 100.0, -1.0 + j as f64 / 100.0);
                assert!(best <= val(x, y) + 1e-12);
            }
        }
        // interior optimum equals the plain solve
        let f2 = DVector::from_vec(vec![0.1, -0.2]);
        let u2 = box_qp(&h, &f2, -1.0, 1.0).unwrap();
        let direct = h.clone().try_inverse().unwrap() * -f2;
        assert!((u2 - direct).amax() < 1e-14);
    }

    #[test]
    fn gap_is_exact() {
        let mut r = rng(3);
        for dims in 1..=6 {
            let inst = QuadraticInstance::random(&mut r, dims, 0.25).unwrap();
            assert!((inst.max_vertex_gap() - 0.25).abs() <= 1e-12);
            assert!(inst.sampled_gap(&mut r, 2000) <= 0.25 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn mu_is_smallest_hessian_eigenvalue() {
        let inst = QuadraticInstance::random(&mut rng(5), 4, 0.1).unwrap();
        let (h, _) = inst.true_quadratic();
        let mu = inst.mu();
        let eye = DMatrix::<f64>::identity(4, 4);
        // H - (mu - tol) I is positive definite, H - (mu + tol) I is not
        assert!((h.clone() - &eye * (mu - 1e-10)).cholesky().is_some());
        assert!((h - &eye * (mu + 1e-10)).cholesky().is_none());
        assert!(mu >= inst.r - 1e-12);
    }

    #[test]
    fn k_j_bounds_sampled_gradients() {
        let mut r = rng(9);
        let inst = QuadraticInstance::random(&mut r, 3, 0.5).unwrap();
        let kj = inst.k_j();
        for _ in 0..2000 {
            let u = DVector::from_fn(3, |_, _| r.gen_range(inst.lo..=inst.hi));
            let t: f64 = r.gen();
            let x = inst.rollout(&u) * (1.0 - t) + inst.surrogate_rollout(&u) * t;
            let grad = x.component_mul(&inst.q);
            assert!(grad.norm() <= kj * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_gap_gives_identical_minimizers() {
        let inst = QuadraticInstance::random(&mut rng(1), 5, 0.0).unwrap();
        let (a, b, c) = check_bounds(&inst).unwrap();
        assert!((a - b).amax() <= 1e-10);
        assert!(c.passed());
        assert_eq!(c.distance_bound, 0.0);
    }

    #[test]
    fn bounds_hold_on_random_instances() {
        let checks = run_checks(&mut rng(11), 60, 6, 1.0, 10).unwrap();
        assert!(checks.iter().all(BoundCheck::passed));
    }

    #[test]
    fn distance_bound_scales_with_root_of_gap() {
        let inst = QuadraticInstance::random(&mut rng(2), 3, 0.1).unwrap();
        let (_, _, a) = check_bounds(&inst).unwrap();
        let (_, _, b) = check_bounds(&inst.with_gap(0.4)).unwrap();
        // K_J grows with the gap too, so compare at fixed K_J and mu
        let rhs = |m: f64| 2.0 * (a.k_j * m / a.mu).sqrt();
        assert!((rhs(0.4) / rhs(0.1) - 2.0).abs() < 1e-12);
        assert!(b.distance_bound > a.distance_bound);
    }

    #[test]
    fn adversarial_instances_stay_valid() {
        let mut r = rng(4);
        for dims in 1..=4 {
            let inst = adversarial_instance(&mut r, dims, 0.3).unwrap();
            let (_, _, c) = check_bounds(&inst).unwrap();
            assert!(c.passed(), "{c:?}");
            assert!(c.distance_ratio() > 0.0 && c.distance_ratio() <= 1.0);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(QuadraticInstance::random(&mut rng(0), 0, 0.1).is_err());
        assert!(QuadraticInstance::random(&mut rng(0), 2, -1.0).is_err());
    }
}
