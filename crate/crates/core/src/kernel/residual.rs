use std::fmt;

use super::{KernelGrid, KernelSet};
use crate::hetero::HeteroSystem;

/// Discrete residuals of the kernel equations and their boundary conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub interior_max: f64,
    /// `(x, ξ, component)` of the largest interior residual.
    pub interior_location: Option<(f64, f64, String)>,
    pub interior_rms: f64,
    /// Diagonal relation for `G21`.
    pub bc_diagonal: f64,
    /// Commutator relation for `G22` on the diagonal (corner excluded).
    pub bc_commutator: f64,
    /// Upper triangle (with diagonal) of the `ξ = 0` relation.
    pub bc_boundary: f64,
    /// Largest upper-triangular entry of `Δ`.
    pub delta_upper: f64,
}

impl ResidualReport {
    pub fn bc_max(&self) -> f64 {
        self.bc_diagonal.max(self.bc_commutator).max(self.bc_boundary)
    }
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "interior_max      {:.6e}", self.interior_max)?;
        if let Some((x, xi, c)) = &self.interior_location {
            writeln!(f, "interior_at       x={x:.4} xi={xi:.4} {c}")?;
        }
        writeln!(f, "interior_rms      {:.6e}", self.interior_rms)?;
        writeln!(f, "bc_diagonal       {:.6e}", self.bc_diagonal)?;
        writeln!(f, "bc_commutator     {:.6e}", self.bc_commutator)?;
        writeln!(f, "bc_boundary       {:.6e}", self.bc_boundary)?;
        write!(f, "delta_upper       {:.6e}", self.delta_upper)
    }
}

pub fn kernel_residuals(kernels: &KernelSet, system: &HeteroSystem, grid: KernelGrid) -> ResidualReport {
    let (n, m) = (system.n, system.m);
    let h = grid.h();
    let big_n = grid.n;
    let mut max = 0.0_f64;
    let mut loc = None;
    let mut sum_sq = 0.0;
    let mut count = 0usize;

    let mut record = |r: f64, a: usize, b: usize, name: String| {
        sum_sq += r * r;
        count += 1;
        if r.abs() > max {
            max = r.abs();
            loc = Some((grid.x(a), grid.x(b), name));
        }
    };

    for a in 2..big_n {
        for b in 1..a - 1 {
            let (x, xi) = (grid.x(a), grid.x(b));
            for i in 0..m {
                for j in 0..n {
                    let f = kernels.g21(i, j);
                    let dx = (f.get(a + 1, b) - f.get(a - 1, b)) / (2.0 * h);
                    let dxi = (f.get(a, b + 1) - f.get(a, b - 1)) / (2.0 * h);
                    let mut r = system.lr(j, xi) * dxi - system.ll(i, x) * dx
                        + f.get(a, b) * system.lambda_r[j].derivative(xi);
                    for p in 0..n {
                        r += kernels.g21(i, p).get(a, b) * system.sr.entry(p, j, xi);
                    }
                    for p in 0..m {
                        r += kernels.g22(i, p).get(a, b) * system.so.entry(p, j, xi);
                    }
                    record(r, a, b, format!("G21[{}{}]", i + 1, j + 1));
                }
                for j in 0..m {
                    let f = kernels.g22(i, j);
                    let dx = (f.get(a + 1, b) - f.get(a - 1, b)) / (2.0 * h);
                    let dxi = (f.get(a, b + 1) - f.get(a, b - 1)) / (2.0 * h);
                    let mut r = system.ll(i, x) * dx
                        + system.ll(j, xi) * dxi
                        + f.get(a, b) * system.lambda_l[j].derivative(xi);
                    for p in 0..n {
                        r -= kernels.g21(i, p).get(a, b) * system.sl.entry(p, j, xi);
                    }
                    record(r, a, b, format!("G22[{}{}]", i + 1, j + 1));
                }
            }
        }
    }

    let mut bc_diagonal = 0.0_f64;
    let mut bc_commutator = 0.0_f64;
    for a in 0..=big_n {
        let x = grid.x(a);
        for i in 0..m {
            for j in 0..n {
                let r = kernels.g21(i, j).get(a, a) * (system.lr(j, x) + system.ll(i, x))
                    + system.so.entry(i, j, x);
                bc_diagonal = bc_diagonal.max(r.abs());
            }
            if a > 0 {
                for j in 0..m {
                    let r = kernels.g22(i, j).get(a, a) * (system.ll(j, x) - system.ll(i, x));
                    bc_commutator = bc_commutator.max(r.abs());
                }
            }
        }
    }

    let mut bc_boundary = 0.0_f64;
    for a in 0..=big_n {
        for i in 0..m {
            for j in i..m {
                let mut r = kernels.g22(i, j).get(a, 0) * system.ll(j, 0.0);
                for p in 0..n {
                    r -= kernels.g21(i, p).get(a, 0) * system.lr(p, 0.0) * system.q0[(p, j)];
                }
                bc_boundary = bc_boundary.max(r.abs());
            }
        }
    }

    let delta_upper = kernels
        .delta
        .iter()
        .flat_map(|d| (0..m).flat_map(move |i| (i..m).map(move |j| d[(i, j)].abs())))
        .fold(0.0, f64::max);

    ResidualReport {
        interior_max: max,
        interior_location: loc,
        interior_rms: if count > 0 { (sum_sq / count as f64).sqrt() } else { 0.0 },
        bc_diagonal,
        bc_commutator,
        bc_boundary,
        delta_upper,
    }
}
