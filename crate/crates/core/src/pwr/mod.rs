//! One-dimensional axial PWR model: iodine/xenon kinetics per node, a
//! cumulative control-rod position, and an algebraic power balance solved
//! for nodal powers and boron concentration.

mod model;
mod params;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SdoError};

pub use model::{NominalPoint, PwrModel};
pub use params::ModelParams;

/// Shared accumulator of RK4 sub-steps taken by the simulator.
#[derive(Debug, Clone, Default)]
pub struct CallCounter(Arc<AtomicU64>);

impl CallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Tridiagonal exchange operator `diag(-1, -2, ..., -2, -1) + I⁺ + I⁻`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ExchangeMatrix {
    pub fn new(n_z: usize) -> Result<Self> {
        if n_z < 2 || n_z % 2 != 0 {
            return Err(SdoError::Config(format!(
                "exchange matrix needs an even node count >= 2, got {n_z}"
            )));
        }
        let mut data = vec![0.0; n_z * n_z];
        for i in 0..n_z {
            let edge = i == 0 || i == n_z - 1;
            data[i * n_z + i] = if edge { -1.0 } else { -2.0 };
            if i + 1 < n_z {
                data[i * n_z + i + 1] = 1.0;
                data[(i + 1) * n_z + i] = 1.0;
            }
        }
        Ok(Self { n: n_z, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.n)
    }

    /// `M · v`, exploiting the tridiagonal structure.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut acc = self.data[i * n + i] * v[i];
            if i > 0 {
                acc += v[i - 1];
            }
            if i + 1 < n {
                acc += v[i + 1];
            }
            out[i] = acc;
        }
    }
}

/// Full model-variable vector `x = (x_d, x_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub iodine: Vec<f64>,
    pub xenon: Vec<f64>,
    pub h_cr: f64,
    pub power: Vec<f64>,
    pub boron: f64,
    pub t_in: f64,
}

impl SimState {
    pub fn n_z(&self) -> usize {
        self.power.len()
    }

    pub fn dim(&self) -> usize {
        3 * self.n_z() + 3
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    pub fn total_xenon(&self) -> f64 {
        self.xenon.iter().sum()
    }

    /// Flattened layout: `I_1..I_n, X_1..X_n, h_cr, P_1..P_n, C_b, T_in`.
    pub fn write_into(&self, out: &mut [f64]) {
        let n = self.n_z();
        out[..n].copy_from_slice(&self.iodine);
        out[n..2 * n].copy_from_slice(&self.xenon);
        out[2 * n] = self.h_cr;
        out[2 * n + 1..3 * n + 1].copy_from_slice(&self.power);
        out[3 * n + 1] = self.boron;
        out[3 * n + 2] = self.t_in;
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.write_into(&mut v);
        v
    }

    pub fn from_slice(n_z: usize, v: &[f64]) -> Result<Self> {
        if v.len() != 3 * n_z + 3 {
            return Err(SdoError::Domain(format!(
                "state vector of length {} does not match n_z = {n_z}",
                v.len()
            )));
        }
        Ok(Self {
            iodine: v[..n_z].to_vec(),
            xenon: v[n_z..2 * n_z].to_vec(),
            h_cr: v[2 * n_z],
            power: v[2 * n_z + 1..3 * n_z + 1].to_vec(),
            boron: v[3 * n_z + 1],
            t_in: v[3 * n_z + 2],
        })
    }

    /// Column names matching [`SimState::write_into`].
    pub fn column_names(n_z: usize) -> Vec<String> {
        let mut cols = Vec::with_capacity(3 * n_z + 3);
        cols.extend((1..=n_z).map(|j| format!("I_{j}")));
        cols.extend((1..=n_z).map(|j| format!("X_{j}")));
        cols.push("h_cr".into());
        cols.extend((1..=n_z).map(|j| format!("P_{j}")));
        cols.push("C_b".into());
        cols.push("T_in".into());
        cols
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// States `x_0..x_N` together with the `(u, w)` sequences that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<SimState>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.u.len()
    }

    pub fn last(&self) -> &SimState {
        self.states.last().expect("trajectory always holds x0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exchange_matrix_two_nodes() {
        let m = ExchangeMatrix::new(2).unwrap();
        let rows: Vec<Vec<f64>> = m.rows().map(|r| r.to_vec()).collect();
        assert_eq!(rows, vec![vec![-1.0, 1.0], vec![1.0, -1.0]]);
    }

    #[test]
    fn exchange_matrix_four_nodes() {
        let m = ExchangeMatrix::new(4).unwrap();
        let rows: Vec<Vec<f64>> = m.rows().map(|r| r.to_vec()).collect();
        assert_eq!(
            rows,
            vec![
                vec![-1.0, 1.0, 0.0, 0.0],
                vec![1.0, -2.0, 1.0, 0.0],
                vec![0.0, 1.0, -2.0, 1.0],
                vec![0.0, 0.0, 1.0, -1.0],
            ]
        );
    }

    #[test]
    fn exchange_matrix_annihilates_constants_and_is_symmetric() {
        for n in (2..=20).step_by(2) {
            let m = ExchangeMatrix::new(n).unwrap();
            let mut out = vec![0.0; n];
            m.apply(&vec![1.0; n], &mut out);
            assert!(out.iter().all(|v| *v == 0.0));
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
        }
    }

    #[test]
    fn exchange_matrix_rejects_odd_or_small() {
        for n in [0, 1, 3, 7] {
            assert!(matches!(ExchangeMatrix::new(n), Err(SdoError::Config(_))));
        }
    }

    #[test]
    fn state_vector_round_trip() {
        let s = SimState {
            iodine: vec![1.0, 2.0],
            xenon: vec![3.0, 4.0],
            h_cr: 5.0,
            power: vec![6.0, 7.0],
            boron: 8.0,
            t_in: 9.0,
        };
        let v = s.to_vec();
        assert_eq!(v, (1..=9).map(f64::from).collect::<Vec<_>>());
        assert_eq!(SimState::from_slice(2, &v).unwrap(), s);
        assert_eq!(SimState::column_names(2).len(), 9);
    }

    #[test]
    fn counter_is_shared_between_clones() {
        let c = CallCounter::new();
        let d = c.clone();
        d.add(7);
        c.add(3);
        assert_eq!(c.get(), 10);
    }
}
