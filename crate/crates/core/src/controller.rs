//! Backstepping transformation and boundary feedback.
//!
//! ```text
//! ε = u
//! β(x) = v(x) - ∫_0^x [G21(x,ξ) u(ξ) + G22(x,ξ) v(ξ)] dξ
//! U(t) = -R1 u(t,1) + ∫_0^1 [G21(1,ξ) u(ξ) + G22(1,ξ) v(ξ)] dξ
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::KernelSet;
use crate::quadrature;
use crate::state::{RiemannState, SimGrid};

/// Kernels interpolated onto a simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledKernels {
    pub grid: SimGrid,
    pub n: usize,
    pub m: usize,
    /// `[i][p][j] = G21_ip(1, x_j)`.
    k1: Vec<Vec<Vec<f64>>>,
    /// `[i][q][j] = G22_iq(1, x_j)`.
    l1: Vec<Vec<Vec<f64>>>,
    /// `[i][p]` holds `G21_ip(x_r, x_j)` for `j <= r`, packed by rows.
    k_full: Vec<Vec<Vec<f64>>>,
    l_full: Vec<Vec<Vec<f64>>>,
    zero: bool,
}

fn packed(r: usize, j: usize) -> usize {
    r * (r + 1) / 2 + j
}

impl SampledKernels {
    pub fn new(kernels: &KernelSet, grid: SimGrid) -> Self {
        let (n, m) = (kernels.n, kernels.m);
        let xs = grid.centers();
        let row = |f: &crate::kernel::TriField| xs.iter().map(|&xi| f.eval(1.0, xi)).collect::<Vec<_>>();
        let full = |f: &crate::kernel::TriField| {
            let mut out = Vec::with_capacity(grid.nx * (grid.nx + 1) / 2);
            for r in 0..grid.nx {
                for j in 0..=r {
                    out.push(f.eval(xs[r], xs[j]));
                }
            }
            out
        };
        let zero = kernels.k.iter().chain(&kernels.l).all(|f| f.is_zero());
        Self {
            grid,
            n,
            m,
            k1: (0..m).map(|i| (0..n).map(|p| row(kernels.g21(i, p))).collect()).collect(),
            l1: (0..m).map(|i| (0..m).map(|q| row(kernels.g22(i, q))).collect()).collect(),
            k_full: (0..m).map(|i| (0..n).map(|p| full(kernels.g21(i, p))).collect()).collect(),
            l_full: (0..m).map(|i| (0..m).map(|q| full(kernels.g22(i, q))).collect()).collect(),
            zero,
        }
    }

    /// Zero kernels of the given shape.
    pub fn zeros(n: usize, m: usize, grid: SimGrid) -> Self {
        let nx = grid.nx;
        let tri = nx * (nx + 1) / 2;
        Self {
            grid,
            n,
            m,
            k1: vec![vec![vec![0.0; nx]; n]; m],
            l1: vec![vec![vec![0.0; nx]; m]; m],
            k_full: vec![vec![vec![0.0; tri]; n]; m],
            l_full: vec![vec![vec![0.0; tri]; m]; m],
            zero: true,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.zero
    }

    fn check(&self, state: &RiemannState) -> Result<()> {
        if state.n() != self.n || state.m() != self.m {
            return Err(Error::Dimension(format!(
                "state has {}+{} components, kernels expect {}+{}",
                state.n(),
                state.m(),
                self.n,
                self.m
            )));
        }
        state.check_grid(self.grid)
    }

    /// Integrand `G21(1,ξ)u(ξ) + G22(1,ξ)v(ξ)` of row `i` at every cell.
    pub fn boundary_integrand(&self, state: &RiemannState, i: usize) -> Vec<f64> {
        (0..self.grid.nx)
            .map(|j| {
                let mut s = 0.0;
                for p in 0..self.n {
                    s += self.k1[i][p][j] * state.u[p][j];
                }
                for q in 0..self.m {
                    s += self.l1[i][q][j] * state.v[q][j];
                }
                s
            })
            .collect()
    }

    /// `∫_0^1 [G21(1,ξ)u + G22(1,ξ)v] dξ`.
    pub fn boundary_integral(&self, state: &RiemannState) -> DVector<f64> {
        let dx = self.grid.dx();
        DVector::from_fn(self.m, |i, _| {
            if self.zero {
                0.0
            } else {
                quadrature::cell_integral(&self.boundary_integrand(state, i), dx)
            }
        })
    }
}

/// Value of `u(t,1)`, taken from the last cell.
pub fn u_at_one(state: &RiemannState) -> DVector<f64> {
    DVector::from_fn(state.n(), |p, _| *state.u[p].last().unwrap())
}

/// Value of `v(t,0)`, taken from the first cell.
pub fn v_at_zero(state: &RiemannState) -> DVector<f64> {
    DVector::from_fn(state.m(), |q, _| state.v[q][0])
}

/// Feedback `U(t)`.
pub fn control_input(
    kernels: &SampledKernels,
    state: &RiemannState,
    r1: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    kernels.check(state)?;
    if r1.shape() != (kernels.m, kernels.n) {
        return Err(Error::Dimension(format!(
            "R1 is {}x{}, expected {}x{}",
            r1.nrows(),
            r1.ncols(),
            kernels.m,
            kernels.n
        )));
    }
    Ok(-(r1 * u_at_one(state)) + kernels.boundary_integral(state))
}

/// `(ε, β)` at every cell centre.
pub fn to_target(kernels: &SampledKernels, state: &RiemannState) -> Result<RiemannState> {
    kernels.check(state)?;
    let mut beta = state.v.clone();
    if !kernels.zero {
        let nx = kernels.grid.nx;
        let dx = kernels.grid.dx();
        for (i, b) in beta.iter_mut().enumerate() {
            for r in 0..nx {
                let mut acc = 0.0;
                for j in 0..=r {
                    let w = if j == r { 0.5 } else { 1.0 };
                    let mut f = 0.0;
                    for p in 0..kernels.n {
                        f += kernels.k_full[i][p][packed(r, j)] * state.u[p][j];
                    }
                    for q in 0..kernels.m {
                        f += kernels.l_full[i][q][packed(r, j)] * state.v[q][j];
                    }
                    acc += w * f;
                }
                b[r] -= dx * acc;
            }
        }
    }
    Ok(RiemannState {
        u: state.u.clone(),
        v: beta,
        t: state.t,
    })
}

/// `β(t,1)` given the boundary value `v(t,1)`, and the quadrature error
/// bound of the integral it subtracts.
pub fn beta_at_one(
    kernels: &SampledKernels,
    state: &RiemannState,
    v_one: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    kernels.check(state)?;
    let dx = kernels.grid.dx();
    let integral = kernels.boundary_integral(state);
    let bound = DVector::from_fn(kernels.m, |i, _| {
        if kernels.zero {
            0.0
        } else {
            quadrature::trapezoid_error_bound(&kernels.boundary_integrand(state, i), dx)
        }
    });
    Ok((v_one - integral, bound))
}
