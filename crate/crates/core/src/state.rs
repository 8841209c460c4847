//! Simulation grid and characteristic state containers.

use crate::error::{Error, Result};
use crate::quadrature;

pub const MIN_CELLS: usize = 16;

/// Uniform cell-centred grid on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimGrid {
    pub nx: usize,
}

impl SimGrid {
    pub fn new(nx: usize) -> Result<Self> {
        if nx < MIN_CELLS {
            return Err(Error::Validation(format!(
                "simulation grid needs Nx >= {MIN_CELLS}, got {nx}"
            )));
        }
        Ok(Self { nx })
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.nx as f64
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.x(j)).collect()
    }
}

/// Rightward components `u` and leftward components `v` at time `t`,
/// each sampled at cell centres. The target state `(ε, β)` uses the same
/// container.
#[derive(Debug, Clone, PartialEq)]
pub struct RiemannState {
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: f64,
}

impl RiemannState {
    pub fn zeros(n: usize, m: usize, grid: SimGrid) -> Self {
        Self {
            u: vec![vec![0.0; grid.nx]; n],
            v: vec![vec![0.0; grid.nx]; m],
            t: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn m(&self) -> usize {
        self.v.len()
    }

    pub fn nx(&self) -> usize {
        self.u.first().or(self.v.first()).map_or(0, Vec::len)
    }

    /// Components in system order `(u_1..u_n, v_1..v_m)`.
    pub fn components(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.u.iter().chain(self.v.iter())
    }

    pub fn is_finite(&self) -> bool {
        self.components().all(|c| c.iter().all(|v| v.is_finite()))
    }

    pub fn check_grid(&self, grid: SimGrid) -> Result<()> {
        if self.components().any(|c| c.len() != grid.nx) {
            return Err(Error::Dimension(format!(
                "state is not sampled on the {}-cell grid",
                grid.nx
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> Self {
        let sc = |c: &Vec<Vec<f64>>| c.iter().map(|w| w.iter().map(|v| a * v).collect()).collect();
        Self {
            u: sc(&self.u),
            v: sc(&self.v),
            t: self.t,
        }
    }

    /// Values of component `k` (system order) at every cell.
    pub fn component(&self, k: usize) -> &[f64] {
        if k < self.n() {
            &self.u[k]
        } else {
            &self.v[k - self.n()]
        }
    }
}

/// Per-component `(∫_0^1 w² dx)^{1/2}`, system order.
pub fn l2_norms(state: &RiemannState, grid: SimGrid) -> Vec<f64> {
    state
        .components()
        .map(|c| {
            let sq: Vec<f64> = c.iter().map(|v| v * v).collect();
            quadrature::cell_integral(&sq, grid.dx()).sqrt()
        })
        .collect()
}

pub fn total_norm(norms: &[f64]) -> f64 {
    norms.iter().map(|v| v * v).sum::<f64>().sqrt()
}
