//! Lyapunov function of the target system and decay certification.
//!
//! ```text
//! V = 1/2 ∫ e^{-νx} εᵀ Λr⁻¹ ε dx + 1/2 ∫ (1+x) βᵀ D Λl⁻¹ β dx
//! ```

use std::fmt;

use crate::controller::{to_target, SampledKernels};
use crate::error::{Error, Result};
use crate::field::spectral_norm;
use crate::hetero::HeteroSystem;
use crate::kernel::KernelSet;
use crate::quadrature;
use crate::sim::SimTrace;
use crate::state::{RiemannState, SimGrid};

pub const DEFAULT_CERT_TOL: f64 = 0.05;
const BOUND_SAMPLES: usize = 1001;
const MAX_NU_DOUBLINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovParams {
    pub nu: f64,
    pub d: Vec<f64>,
    pub q_bar: f64,
    /// Common bound on `‖Sr‖, ‖Sl‖, ‖Cr‖, ‖Cl‖`.
    pub coupling_bound: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub c1: f64,
    pub c2: f64,
    pub c: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    /// Floor of the weight recursion; exceeds `q_bar` when inflated.
    pub d_floor: f64,
    pub inflated: bool,
}

impl fmt::Display for LyapunovParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "nu                {:.6}", self.nu)?;
        let d: Vec<String> = self.d.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(f, "d                 [{}]", d.join(", "))?;
        writeln!(f, "q_bar             {:.6}", self.q_bar)?;
        writeln!(f, "coupling_bound    {:.6e}", self.coupling_bound)?;
        writeln!(f, "lambda_min        {:.6}", self.lambda_min)?;
        writeln!(f, "lambda_max        {:.6}", self.lambda_max)?;
        writeln!(f, "C1                {:.6e}", self.c1)?;
        writeln!(f, "C2                {:.6e}", self.c2)?;
        writeln!(f, "f1                {:.6}", self.f1)?;
        writeln!(f, "f2                {:.6}", self.f2)?;
        writeln!(f, "f3                {:.6}", self.f3)?;
        writeln!(f, "d_floor           {:.6}{}", self.d_floor, if self.inflated { " (inflated)" } else { "" })?;
        write!(f, "c                 {:.6}", self.c)
    }
}

/// `f1(ν) = ν - 2 (M/λ̲)² - (M/λ̲)(5 + 1/ν)`.
pub fn f1(nu: f64, coupling_bound: f64, lambda_min: f64) -> f64 {
    let mu = coupling_bound / lambda_min;
    nu - 2.0 * mu * mu - mu * (5.0 + 1.0 / nu)
}

/// `min d - 2m + 1 - 1/ν`.
pub fn f2(nu: f64, d: &[f64]) -> f64 {
    let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
    dmin - 2.0 * d.len() as f64 + 1.0 - 1.0 / nu
}

/// `q̄ - 2m + 1 - 1/ν`.
pub fn f3(nu: f64, q_bar: f64, m: usize) -> f64 {
    q_bar - 2.0 * m as f64 + 1.0 - 1.0 / nu
}

/// Weights from `d_m = floor`,
/// `d_k = floor + ∫ (1+x) Σ_{i>k} d_i² δ_ik² / λl_i² dx`.
pub fn weight_recursion(floor: f64, delta_integrals: &[Vec<f64>]) -> Vec<f64> {
    let m = delta_integrals.len();
    let mut d = vec![floor; m];
    for k in (0..m.saturating_sub(1)).rev() {
        let mut acc = floor;
        for i in k + 1..m {
            acc += d[i] * d[i] * delta_integrals[i][k];
        }
        d[k] = acc;
    }
    d
}

/// `I[i][k] = ∫_0^1 (1+x) δ_ik(x)² / λl_i(x)² dx` on the kernel lattice.
fn delta_integrals(system: &HeteroSystem, kernels: &KernelSet) -> Vec<Vec<f64>> {
    let m = system.m;
    let grid = kernels.grid;
    (0..m)
        .map(|i| {
            (0..m)
                .map(|k| {
                    let f: Vec<f64> = (0..=grid.n)
                        .map(|a| {
                            let x = grid.x(a);
                            let dl = kernels.delta[a][(i, k)];
                            (1.0 + x) * dl * dl / system.ll(i, x).powi(2)
                        })
                        .collect();
                    quadrature::trapezoid_nodes(&f, grid.h())
                })
                .collect()
        })
        .collect()
}

fn lattice_sup(fields: &[crate::kernel::TriField], rows: usize, cols: usize, kernels: &KernelSet) -> f64 {
    let grid = kernels.grid;
    let mut sup = 0.0_f64;
    for a in 0..=grid.n {
        for b in 0..=a {
            let mat = nalgebra::DMatrix::from_fn(rows, cols, |i, j| fields[i * cols + j].get(a, b));
            sup = sup.max(spectral_norm(&mat));
        }
    }
    sup
}

fn assemble(
    nu: f64,
    q_bar: f64,
    ints: &[Vec<f64>],
    coupling_bound: f64,
    lo: f64,
    hi: f64,
) -> LyapunovParams {
    let m = ints.len();
    let mut floor = q_bar;
    let mut d = weight_recursion(floor, ints);
    let mut inflated = false;
    if f2(nu, &d) <= 0.0 {
        floor = q_bar + 2.0 * m as f64 - 1.0 + 1.0 / nu;
        d = weight_recursion(floor, ints);
        inflated = true;
    }
    let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
    let dmax = d.iter().copied().fold(0.0, f64::max);
    let v1 = f1(nu, coupling_bound, lo);
    let v2 = f2(nu, &d);
    LyapunovParams {
        nu,
        q_bar,
        coupling_bound,
        lambda_min: lo,
        lambda_max: hi,
        c1: (0.5 / hi) * (-nu).exp().min(dmin),
        c2: (0.5 / lo) * 1.0_f64.max(2.0 * dmax),
        c: lo * v1.min(v2 / dmax),
        f1: v1,
        f2: v2,
        f3: f3(nu, q_bar, m),
        d_floor: floor,
        inflated,
        d,
    }
}

/// Parameter selection: weights by the descending recursion, then the
/// smallest admissible `ν` (geometric search, refined by bisection).
pub fn choose_params(system: &HeteroSystem, kernels: &KernelSet) -> Result<LyapunovParams> {
    let (lo, hi) = system.speed_bounds()?;
    let q0tq0 = system.q0.transpose() * &system.q0;
    let q_bar = spectral_norm(&q0tq0) * (1.0 + 1e-9);

    let mut coupling_bound = system
        .sr
        .sup_norm(BOUND_SAMPLES)
        .max(system.sl.sup_norm(BOUND_SAMPLES));
    coupling_bound = coupling_bound
        .max(lattice_sup(&kernels.cr, system.n, system.n, kernels))
        .max(lattice_sup(&kernels.cl, system.n, system.m, kernels));
    if !coupling_bound.is_finite() {
        return Err(Error::Bound("coupling coefficients are unbounded".into()));
    }
    let ints = delta_integrals(system, kernels);
    if ints.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Bound("boundary coupling Δ is unbounded".into()));
    }

    let admissible = |p: &LyapunovParams| p.f1 > 0.0 && p.f2 > 0.0;
    let mut nu = 1.0;
    let mut params = assemble(nu, q_bar, &ints, coupling_bound, lo, hi);
    let mut doublings = 0;
    while !admissible(&params) {
        doublings += 1;
        if doublings > MAX_NU_DOUBLINGS {
            return Err(Error::Bound(format!(
                "no admissible ν found (coupling bound {coupling_bound:.3e})"
            )));
        }
        nu *= 2.0;
        params = assemble(nu, q_bar, &ints, coupling_bound, lo, hi);
    }
    if doublings > 0 {
        let (mut bad, mut good) = (nu / 2.0, nu);
        while (good - bad) > 1e-3 * good {
            let mid = 0.5 * (bad + good);
            if admissible(&assemble(mid, q_bar, &ints, coupling_bound, lo, hi)) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        params = assemble(good, q_bar, &ints, coupling_bound, lo, hi);
    }
    if !(params.c > 0.0) {
        return Err(Error::Bound(format!("decay rate c = {} is not positive", params.c)));
    }
    Ok(params)
}

/// Speeds at cell centres, `[component][cell]`, system order.
pub fn cell_speeds(system: &HeteroSystem, grid: SimGrid) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let xs = grid.centers();
    (
        (0..system.n).map(|i| xs.iter().map(|&x| system.lr(i, x)).collect()).collect(),
        (0..system.m).map(|i| xs.iter().map(|&x| system.ll(i, x)).collect()).collect(),
    )
}

/// `V(ε, β)` by the cell-centred rule.
pub fn evaluate_v(params: &LyapunovParams, target: &RiemannState, system: &HeteroSystem, grid: SimGrid) -> f64 {
    let (lr, ll) = cell_speeds(system, grid);
    evaluate_v_with(params, target, &lr, &ll, grid)
}

pub fn evaluate_v_with(
    params: &LyapunovParams,
    target: &RiemannState,
    lr: &[Vec<f64>],
    ll: &[Vec<f64>],
    grid: SimGrid,
) -> f64 {
    let mut acc = 0.0;
    for j in 0..grid.nx {
        let x = grid.x(j);
        let we = (-params.nu * x).exp();
        for (i, e) in target.u.iter().enumerate() {
            acc += we * e[j] * e[j] / lr[i][j];
        }
        for (i, b) in target.v.iter().enumerate() {
            acc += (1.0 + x) * params.d[i] * b[j] * b[j] / ll[i][j];
        }
    }
    0.5 * grid.dx() * acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub times: Vec<f64>,
    pub v: Vec<f64>,
    /// `-slope` of the least-squares fit of `ln V` (positive samples only).
    pub fitted_rate: Option<f64>,
    pub theoretical_c: f64,
    pub tol: f64,
    pub violations: usize,
    /// Largest `V(t_{k+1}) / (V(t_k) e^{-cΔt})`.
    pub worst_ratio: f64,
    pub final_norm: f64,
    pub initial_norm: f64,
    /// `sqrt(C2/C1) ‖z(0)‖ e^{-cT/2}`.
    pub final_bound: f64,
    pub passed: bool,
}

impl fmt::Display for DecayReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples           {}", self.v.len())?;
        writeln!(f, "V(0)              {:.6e}", self.v.first().copied().unwrap_or(0.0))?;
        writeln!(f, "V(T)              {:.6e}", self.v.last().copied().unwrap_or(0.0))?;
        match self.fitted_rate {
            Some(r) => writeln!(f, "fitted_rate       {r:.6}")?,
            None => writeln!(f, "fitted_rate       n/a")?,
        }
        writeln!(f, "theoretical_c     {:.6}", self.theoretical_c)?;
        writeln!(f, "tolerance         {:.3}", self.tol)?;
        writeln!(f, "violations        {}", self.violations)?;
        writeln!(f, "worst_ratio       {:.6}", self.worst_ratio)?;
        writeln!(f, "target_norm(0)    {:.6e}", self.initial_norm)?;
        writeln!(f, "target_norm(T)    {:.6e}", self.final_norm)?;
        writeln!(f, "final_bound       {:.6e}", self.final_bound)?;
        write!(f, "passed            {}", self.passed)
    }
}

/// Least-squares slope of `ln y` against `t` over positive samples.
pub fn log_linear_rate(times: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0 && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

/// Checks `V(t_{k+1}) <= V(t_k) e^{-cΔt} (1 + tol)` along the trace.
pub fn certify_decay(
    params: &LyapunovParams,
    trace: &SimTrace,
    kernels: &SampledKernels,
    system: &HeteroSystem,
    tol: f64,
) -> Result<DecayReport> {
    if trace.states.len() < 2 {
        return Err(Error::Input(format!(
            "decay certification needs at least 2 samples, got {}",
            trace.states.len()
        )));
    }
    let grid = trace.grid;
    let (lr, ll) = cell_speeds(system, grid);
    let mut v = Vec::with_capacity(trace.states.len());
    let mut norms = Vec::with_capacity(trace.states.len());
    for s in &trace.states {
        let z = to_target(kernels, s)?;
        v.push(evaluate_v_with(params, &z, &lr, &ll, grid));
        norms.push(crate::state::total_norm(&crate::state::l2_norms(&z, grid)));
    }
    let times = trace.times.clone();
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for k in 0..v.len() - 1 {
        let allowed = v[k] * (-params.c * (times[k + 1] - times[k])).exp();
        if v[k] == 0.0 {
            if v[k + 1] != 0.0 {
                violations += 1;
                worst = f64::INFINITY;
            }
            continue;
        }
        let ratio = v[k + 1] / allowed;
        worst = worst.max(ratio);
        if ratio > 1.0 + tol {
            violations += 1;
        }
    }
    let fitted_rate = log_linear_rate(&times, &v);
    let t_final = *times.last().unwrap() - times[0];
    let final_bound = (params.c2 / params.c1).sqrt() * norms[0] * (-0.5 * params.c * t_final).exp();
    let final_norm = *norms.last().unwrap();
    let zero_run = v[0] == 0.0;
    let passed = violations == 0
        && final_norm <= final_bound * (1.0 + 1e-12)
        && (zero_run || fitted_rate.map_or(v.last() == Some(&0.0), |r| r > 0.0));
    Ok(DecayReport {
        times,
        v,
        fitted_rate,
        theoretical_c: params.c,
        tol,
        violations,
        worst_ratio: worst,
        final_norm,
        initial_norm: norms[0],
        final_bound,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{solve_kernels, KernelGrid};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_like() -> HeteroSystem {
        HeteroSystem::transport(
            &[4.06, 6.44],
            &[4.44, 2.16],
            DMatrix::from_row_slice(2, 2, &[0.01, 1.5, -1.5, 0.01]),
            DMatrix::from_row_slice(2, 2, &[0.1, 0.5, -0.5, 0.15]),
        )
    }

    #[test]
    fn q_bar_of_reference_q0() {
        let sys = reference_like();
        let ks = solve_kernels(&sys, KernelGrid::new(8).unwrap(), 1e-8, 10).unwrap();
        let p = choose_params(&sys, &ks).unwrap();
        // oracle: eigenvalues of the symmetric 2x2 Q0ᵀQ0 in closed form
        let q: [[f64; 2]; 2] = [[-1.5, 0.01], [0.01, 1.5]];
        let a = q[0][0] * q[0][0] + q[1][0] * q[1][0];
        let b = q[0][0] * q[0][1] + q[1][0] * q[1][1];
        let c = q[0][1] * q[0][1] + q[1][1] * q[1][1];
        let top = 0.5 * (a + c) + (0.25 * (a - c).powi(2) + b * b).sqrt();
        assert_relative_eq!(p.q_bar, top * (1.0 + 1e-9), max_relative = 1e-12);
        assert!((p.q_bar - 2.2502).abs() < 1e-4);
        // Δ ≡ 0: weights equal the recursion floor
        assert_eq!(p.d[0], p.d_floor);
        assert_eq!(p.d[1], p.d_floor);
    }

    #[test]
    fn zero_coupling_bound_gives_f1_equal_nu() {
        let sys = reference_like();
        let ks = solve_kernels(&sys, KernelGrid::new(8).unwrap(), 1e-8, 10).unwrap();
        let p = choose_params(&sys, &ks).unwrap();
        assert_eq!(p.coupling_bound, 0.0);
        assert_eq!(p.f1, p.nu);
        assert_eq!(p.nu, 1.0);
        let dmax = p.d.iter().copied().fold(0.0, f64::max);
        assert_relative_eq!(p.c, p.lambda_min * p.nu.min(p.f2 / dmax));
    }

    #[test]
    fn sandwich_constants_formula() {
        let sys = reference_like();
        let ks = solve_kernels(&sys, KernelGrid::new(8).unwrap(), 1e-8, 10).unwrap();
        let p = choose_params(&sys, &ks).unwrap();
        let dmin = p.d.iter().copied().fold(f64::INFINITY, f64::min);
        let dmax = p.d.iter().copied().fold(0.0, f64::max);
        assert_eq!(p.c1, (0.5 / p.lambda_max) * (-p.nu).exp().min(dmin));
        assert_eq!(p.c2, (0.5 / p.lambda_min) * 1.0f64.max(2.0 * dmax));
        assert!(p.c1 <= p.c2);
        assert!(p.d.iter().all(|d| *d >= p.q_bar));
        assert!(p.f2 >= p.f3);
    }

    #[test]
    fn v_of_unit_state() {
        let sys = HeteroSystem::transport(&[1.0], &[1.0], DMatrix::zeros(1, 1), DMatrix::zeros(1, 1));
        let g = SimGrid::new(64).unwrap();
        let mut params = assemble(1.0, 1.0, &[vec![0.0]], 0.0, 1.0, 1.0);
        params.nu = 0.0;
        let mut s = RiemannState::zeros(1, 1, g);
        assert_eq!(evaluate_v(&params, &s, &sys, g), 0.0);
        s.u[0] = vec![1.0; 64];
        assert_relative_eq!(evaluate_v(&params, &s, &sys, g), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn sandwich_on_random_states() {
        let sys = reference_like();
        let ks = solve_kernels(&sys, KernelGrid::new(8).unwrap(), 1e-8, 10).unwrap();
        let p = choose_params(&sys, &ks).unwrap();
        let g = SimGrid::new(50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let mut s = RiemannState::zeros(2, 2, g);
            for c in s.u.iter_mut().chain(s.v.iter_mut()) {
                for v in c.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            let z2 = crate::state::total_norm(&crate::state::l2_norms(&s, g)).powi(2);
            let v = evaluate_v(&p, &s, &sys, g);
            assert!(p.c1 * z2 < v && v < p.c2 * z2);
        }
    }

    #[test]
    fn recursion_with_nonzero_delta() {
        let d = weight_recursion(2.0, &[vec![0.0, 0.0], vec![0.25, 0.0]]);
        assert_eq!(d, vec![2.0 + 4.0 * 0.25, 2.0]);
    }

    #[test]
    fn strong_coupling_raises_nu() {
        let ints = vec![vec![0.0]];
        let lo = 1.0;
        let p = assemble(1.0, 3.0, &ints, 0.5, lo, 2.0);
        assert!(p.f1 < 0.0);
        let sys = HeteroSystem::constant(
            &[1.0],
            &[1.0],
            &DMatrix::from_element(1, 1, 0.5),
            &DMatrix::zeros(1, 1),
            &DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 0.5),
        );
        let ks = solve_kernels(&sys, KernelGrid::new(8).unwrap(), 1e-8, 10).unwrap();
        let p = choose_params(&sys, &ks).unwrap();
        assert!(p.nu > 1.0 && p.f1 > 0.0);
        assert!(f1(p.nu * 0.99, p.coupling_bound, p.lambda_min) <= 0.0 || p.nu < 1.01);
    }

    #[test]
    fn log_rate_of_exponential() {
        let t: Vec<f64> = (0..10).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect();
        assert_relative_eq!(log_linear_rate(&t, &y).unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(log_linear_rate(&t[..1], &y[..1]), None);
    }
}
