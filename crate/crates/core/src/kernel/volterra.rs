//! Volterra equations for the target-system couplings
//!
//! ```text
//! Cl(x,ξ) = Sl(x) G22(x,ξ) + ∫_ξ^x Cl(x,η) G22(η,ξ) dη
//! Cr(x,ξ) = Sl(x) G21(x,ξ) + ∫_ξ^x Cl(x,η) G21(η,ξ) dη
//! ```
//!
//! Every integrand argument stays on lattice nodes, so no interpolation is
//! needed: η runs over `x_c`, `b <= c <= a`, with the trapezoid rule.

use super::{KernelSet, TriField};
use crate::error::{Error, Result};
use crate::hetero::HeteroSystem;

/// Returns `(Cr, Cl, sweeps)`.
pub fn solve_c(
    kernels: &KernelSet,
    system: &HeteroSystem,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<TriField>, Vec<TriField>, usize)> {
    let (n, m) = (system.n, system.m);
    let grid = kernels.grid;
    let h = grid.h();
    let big_n = grid.n;
    let sl: Vec<Vec<f64>> = (0..=big_n)
        .map(|a| {
            let x = grid.x(a);
            (0..n * m).map(|e| system.sl.entry(e / m, e % m, x)).collect()
        })
        .collect();

    let forcing = |fields: &[TriField], cols: usize, a: usize, b: usize, p: usize, q: usize| {
        (0..m)
            .map(|k| sl[a][p * m + k] * fields[k * cols + q].get(a, b))
            .sum::<f64>()
    };
    // ∫_ξb^xa Σ_k Cl_pk(x_a, η) F_kq(η, ξ_b) dη
    let memory = |cl: &[TriField], fields: &[TriField], cols: usize, a: usize, b: usize, p: usize, q: usize| {
        if a == b {
            return 0.0;
        }
        let mut acc = 0.0;
        for c in b..=a {
            let w = if c == b || c == a { 0.5 } else { 1.0 };
            let mut s = 0.0;
            for k in 0..m {
                s += cl[p * m + k].get(a, c) * fields[k * cols + q].get(c, b);
            }
            acc += w * s;
        }
        h * acc
    };

    let mut cl = vec![TriField::zeros(grid); n * m];
    let mut next = cl.clone();
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut change: f64 = 0.0;
        for a in 0..=big_n {
            for b in 0..=a {
                for p in 0..n {
                    for q in 0..m {
                        let v = forcing(&kernels.l, m, a, b, p, q)
                            + memory(&cl, &kernels.l, m, a, b, p, q);
                        change = change.max((v - cl[p * m + q].get(a, b)).abs());
                        next[p * m + q].set(a, b, v);
                    }
                }
            }
        }
        std::mem::swap(&mut cl, &mut next);
        if !change.is_finite() || sweeps >= max_iter && change >= tol {
            return Err(Error::Iteration {
                iterations: sweeps,
                last_change: change,
            });
        }
        if change < tol {
            break;
        }
    }

    let mut cr = vec![TriField::zeros(grid); n * n];
    for a in 0..=big_n {
        for b in 0..=a {
            for p in 0..n {
                for q in 0..n {
                    let v = forcing(&kernels.k, n, a, b, p, q) + memory(&cl, &kernels.k, n, a, b, p, q);
                    cr[p * n + q].set(a, b, v);
                }
            }
        }
    }
    Ok((cr, cl, sweeps))
}

#[cfg(test)]
mod tests {
    use super::super::{solve_kernels, KernelGrid};
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn sys(sl: f64, so: f64, q0: f64) -> HeteroSystem {
        HeteroSystem::constant(
            &[1.2],
            &[1.0],
            &DMatrix::from_element(1, 1, 0.3),
            &DMatrix::from_element(1, 1, sl),
            &DMatrix::from_element(1, 1, so),
            DMatrix::from_element(1, 1, q0),
            DMatrix::from_element(1, 1, 0.4),
        )
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let s = sys(0.0, 1.0, 0.5);
        let ks = solve_kernels(&s, KernelGrid::new(16).unwrap(), 1e-10, 100).unwrap();
        let (cr, cl, _) = solve_c(&ks, &s, 1e-10, 50).unwrap();
        assert!(cr.iter().chain(&cl).all(TriField::is_zero));
    }

    #[test]
    fn zero_g22_gives_one_term_series() {
        // Q0 = 0 and Sl = 0 in the G22 equation source would make G22 = 0;
        // here Sl != 0 but G22 is replaced by zero directly.
        let s = sys(0.7, 1.0, 0.0);
        let mut ks = solve_kernels(&s, KernelGrid::new(16).unwrap(), 1e-10, 100).unwrap();
        for f in ks.l.iter_mut() {
            *f = TriField::zeros(ks.grid);
        }
        let (cr, cl, _) = solve_c(&ks, &s, 1e-12, 50).unwrap();
        assert!(cl.iter().all(TriField::is_zero));
        for a in 0..=16 {
            for b in 0..=a {
                assert_eq!(cr[0].get(a, b), 0.7 * ks.g21(0, 0).get(a, b));
            }
        }
    }

    #[test]
    fn constant_kernel_matches_exponential() {
        // G22 ≡ g constant: Cl(x,ξ) = s g e^{g (x-ξ)}.
        let s = sys(0.5, 0.0, 0.0);
        let g = KernelGrid::new(64).unwrap();
        let mut ks = super::super::KernelSet::zeros(g, 1, 1);
        for a in 0..=64 {
            for b in 0..=a {
                ks.l[0].set(a, b, 0.8);
            }
        }
        let (_, cl, sweeps) = solve_c(&ks, &s, 1e-13, 100).unwrap();
        assert!(sweeps < 50);
        assert_relative_eq!(cl[0].get(64, 0), 0.5 * 0.8 * 0.8f64.exp(), max_relative = 1e-3);
    }
}
