//! Closed-loop first-order upwind simulation of the characteristic system.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::bilayer::{EigenBasis, PhysicalState, SetPoint};
use crate::controller::{beta_at_one, control_input, u_at_one, v_at_zero, SampledKernels};
use crate::error::{Error, Result};
use crate::hetero::HeteroSystem;
use crate::lyapunov::{cell_speeds, evaluate_v_with, LyapunovParams};
use crate::state::{l2_norms, total_norm, RiemannState, SimGrid};

pub const DEFAULT_CELLS: usize = 400;
pub const DEFAULT_CFL: f64 = 0.9;
pub const DEFAULT_OUTPUT_EVERY: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum InitialProfile {
    /// Gaussian bump in the lower layer over a flat total depth of 6 with
    /// opposing sinusoidal velocities.
    #[serde(rename = "section4_default")]
    ReferenceBump,
    ConstantSetpoint,
    /// Physical profiles read from a CSV file with columns
    /// `x,h1,u1,h2,u2`, interpolated linearly to cell centres.
    CustomCsv { path: PathBuf },
    /// Same Gaussian `amplitude · exp(-(x-center)²/width)` in every
    /// characteristic component; for systems without a physical model.
    RiemannBump { amplitude: f64, center: f64, width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub grid: SimGrid,
    pub cfl: f64,
    pub t_final: f64,
    pub output_every: usize,
    pub profile: InitialProfile,
    pub controller_on: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::Validation(format!("cfl must be in (0, 1], got {}", self.cfl)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Validation(format!("T must be positive, got {}", self.t_final)));
        }
        if self.output_every == 0 {
            return Err(Error::Validation("output_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Step count and step size with `dt <= cfl dx / λ̄`.
    pub fn time_step(&self, lambda_max: f64) -> (usize, f64) {
        let limit = self.cfl * self.grid.dx() / lambda_max;
        let steps = ((self.t_final / limit) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        (steps, self.t_final / steps as f64)
    }
}

/// Physical model attached to a characteristic system.
#[derive(Debug, Clone, Copy)]
pub struct BilayerContext<'a> {
    pub setpoint: &'a SetPoint,
    pub basis: &'a EigenBasis,
}

/// `(H1, U1, H2, U2)` of the default initial data at `x`.
pub fn reference_profile(x: f64) -> Vector4<f64> {
    let h2 = 2.0 + 0.5 * (-(x - 0.5).powi(2) / 0.003).exp();
    let h1 = 6.0 - h2;
    let s = (2.0 * std::f64::consts::PI * x).sin();
    Vector4::new(h1, 10.0 / h1 + 3.0 * s, h2, -10.0 / h2 - 3.0 * s)
}

fn read_profile_csv(path: &PathBuf, xs: &[f64]) -> Result<Vec<Vector4<f64>>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows: Vec<[f64; 5]> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::Input(format!(
                "{}: expected 5 columns x,h1,u1,h2,u2, got {}",
                path.display(),
                rec.len()
            )));
        }
        let mut row = [0.0; 5];
        for (k, f) in rec.iter().enumerate() {
            row[k] = f.trim().parse().map_err(|_| {
                Error::Input(format!("{}: non-numeric value {f:?}", path.display()))
            })?;
        }
        rows.push(row);
    }
    if rows.len() < 2 || rows.windows(2).any(|w| !(w[1][0] > w[0][0])) {
        return Err(Error::Input(format!(
            "{}: need at least two rows with increasing x",
            path.display()
        )));
    }
    Ok(xs
        .iter()
        .map(|&x| {
            let k = rows.partition_point(|r| r[0] <= x).clamp(1, rows.len() - 1) - 1;
            let (a, b) = (rows[k], rows[k + 1]);
            let t = ((x - a[0]) / (b[0] - a[0])).clamp(0.0, 1.0);
            Vector4::from_fn(|c, _| a[c + 1] + t * (b[c + 1] - a[c + 1]))
        })
        .collect())
}

/// Initial characteristic state on the grid.
pub fn init_state(
    config: &SimConfig,
    system: &HeteroSystem,
    bilayer: Option<BilayerContext>,
) -> Result<RiemannState> {
    let grid = config.grid;
    let xs = grid.centers();
    let (n, m) = (system.n, system.m);
    let mut state = RiemannState::zeros(n, m, grid);
    let physical: Vec<Vector4<f64>> = match &config.profile {
        InitialProfile::RiemannBump {
            amplitude,
            center,
            width,
        } => {
            if !(*width > 0.0) {
                return Err(Error::Validation(format!("bump width must be positive, got {width}")));
            }
            for c in state.u.iter_mut().chain(state.v.iter_mut()) {
                for (j, x) in xs.iter().enumerate() {
                    c[j] = amplitude * (-(x - center).powi(2) / width).exp();
                }
            }
            return Ok(state);
        }
        InitialProfile::ConstantSetpoint => {
            if bilayer.is_none() {
                return Ok(state);
            }
            let sp = bilayer.unwrap().setpoint.as_vector();
            vec![sp; grid.nx]
        }
        InitialProfile::ReferenceBump => xs.iter().map(|&x| reference_profile(x)).collect(),
        InitialProfile::CustomCsv { path } => read_profile_csv(path, &xs)?,
    };
    let ctx = bilayer.ok_or_else(|| {
        Error::Configuration("physical initial profiles need a bilayer set point and basis".into())
    })?;
    if n + m != 4 {
        return Err(Error::Dimension(format!("bilayer profile for a {}-component system", n + m)));
    }
    PhysicalState {
        h1: physical.iter().map(|w| w[0]).collect(),
        u1: physical.iter().map(|w| w[1]).collect(),
        h2: physical.iter().map(|w| w[2]).collect(),
        u2: physical.iter().map(|w| w[3]).collect(),
    }
    .validate()?;
    let wstar = ctx.setpoint.as_vector();
    for (j, w) in physical.iter().enumerate() {
        let xi = ctx.basis.to_riemann(&(w - wstar));
        for k in 0..4 {
            if k < n {
                state.u[k][j] = xi[k];
            } else {
                state.v[k - n][j] = xi[k];
            }
        }
    }
    Ok(state)
}

/// Physical profiles `W* + R ξ` of a characteristic state.
pub fn to_physical(state: &RiemannState, ctx: BilayerContext) -> PhysicalState {
    let nx = state.nx();
    let wstar = ctx.setpoint.as_vector();
    let mut out = PhysicalState {
        h1: Vec::with_capacity(nx),
        u1: Vec::with_capacity(nx),
        h2: Vec::with_capacity(nx),
        u2: Vec::with_capacity(nx),
    };
    for j in 0..nx {
        let xi = Vector4::from_fn(|k, _| state.component(k)[j]);
        let w = wstar + ctx.basis.from_riemann(&xi);
        out.h1.push(w[0]);
        out.u1.push(w[1]);
        out.h2.push(w[2]);
        out.u2.push(w[3]);
    }
    out
}

/// Coefficients sampled at cell centres.
struct CellCoefficients {
    lr: Vec<Vec<f64>>,
    ll: Vec<Vec<f64>>,
    /// `[p][q][j]`
    sr: Vec<Vec<Vec<f64>>>,
    sl: Vec<Vec<Vec<f64>>>,
    so: Vec<Vec<Vec<f64>>>,
    lambda_max: f64,
}

impl CellCoefficients {
    fn new(system: &HeteroSystem, grid: SimGrid) -> Self {
        let xs = grid.centers();
        let (lr, ll) = cell_speeds(system, grid);
        let sample = |fm: &crate::field::FieldMatrix| {
            let (r, c) = fm.shape();
            (0..r)
                .map(|p| (0..c).map(|q| xs.iter().map(|&x| fm.entry(p, q, x)).collect()).collect())
                .collect()
        };
        let lambda_max = lr.iter().chain(&ll).flatten().fold(0.0_f64, |a, b| a.max(*b));
        Self {
            lr,
            ll,
            sr: sample(&system.sr),
            sl: sample(&system.sl),
            so: sample(&system.so),
            lambda_max,
        }
    }
}

fn upwind_step(
    state: &RiemannState,
    coef: &CellCoefficients,
    q0: &DMatrix<f64>,
    v_one: &DVector<f64>,
    dt: f64,
    grid: SimGrid,
) -> RiemannState {
    let nx = grid.nx;
    let r = dt / grid.dx();
    let (n, m) = (state.n(), state.m());
    let u_zero = q0 * v_at_zero(state);
    let mut next = state.clone();
    next.t = state.t + dt;
    for i in 0..n {
        let u = &state.u[i];
        let out = &mut next.u[i];
        for j in 0..nx {
            let left = if j == 0 { u_zero[i] } else { u[j - 1] };
            let mut src = 0.0;
            for p in 0..n {
                src += coef.sr[i][p][j] * state.u[p][j];
            }
            for q in 0..m {
                src += coef.sl[i][q][j] * state.v[q][j];
            }
            out[j] = u[j] - r * coef.lr[i][j] * (u[j] - left) + dt * src;
        }
    }
    for i in 0..m {
        let v = &state.v[i];
        let out = &mut next.v[i];
        for j in 0..nx {
            let right = if j + 1 == nx { v_one[i] } else { v[j + 1] };
            let mut src = 0.0;
            for p in 0..n {
                src += coef.so[i][p][j] * state.u[p][j];
            }
            out[j] = v[j] + r * coef.ll[i][j] * (right - v[j]) + dt * src;
        }
    }
    next
}

/// One explicit step; `control` is `U(t)` (zero when `None`).
pub fn step(
    state: &RiemannState,
    system: &HeteroSystem,
    control: Option<&DVector<f64>>,
    dt: f64,
    grid: SimGrid,
) -> Result<RiemannState> {
    state.check_grid(grid)?;
    let coef = CellCoefficients::new(system, grid);
    check_cfl(dt, coef.lambda_max, grid)?;
    let v_one = boundary_v(state, system, control);
    Ok(upwind_step(state, &coef, &system.q0, &v_one, dt, grid))
}

fn check_cfl(dt: f64, lambda_max: f64, grid: SimGrid) -> Result<()> {
    let limit = grid.dx() / lambda_max;
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-9) {
        return Err(Error::Cfl { dt, limit });
    }
    Ok(())
}

fn boundary_v(state: &RiemannState, system: &HeteroSystem, control: Option<&DVector<f64>>) -> DVector<f64> {
    let reflected = &system.r1 * u_at_one(state);
    match control {
        Some(c) => reflected + c,
        None => reflected,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub grid: SimGrid,
    pub dt: f64,
    pub steps: usize,
    pub times: Vec<f64>,
    pub states: Vec<RiemannState>,
    /// `U(t)` applied from each sample time, system order.
    pub controls: Vec<Vec<f64>>,
    /// Per-component L² norms, system order.
    pub norms: Vec<Vec<f64>>,
    pub total: Vec<f64>,
    pub v: Option<Vec<f64>>,
    /// `max_i |β_i(t,1)|` and the matching quadrature error bound.
    pub beta_one: Vec<f64>,
    pub beta_bound: Vec<f64>,
    pub labels: Vec<usize>,
    pub n: usize,
    pub m: usize,
}

impl SimTrace {
    /// Norm series of the component carrying `label`.
    pub fn norm_by_label(&self, label: usize) -> Option<Vec<f64>> {
        let k = self.labels.iter().position(|l| *l == label)?;
        Some(self.norms.iter().map(|row| row[k]).collect())
    }

    /// Control series in the order of ascending leftward labels.
    pub fn controls_by_label(&self) -> Vec<Vec<f64>> {
        let mut order: Vec<usize> = (0..self.m).collect();
        order.sort_by_key(|&i| self.labels[self.n + i]);
        order
            .iter()
            .map(|&i| self.controls.iter().map(|c| c[i]).collect())
            .collect()
    }
}

pub fn run(
    system: &HeteroSystem,
    kernels: &SampledKernels,
    config: &SimConfig,
    bilayer: Option<BilayerContext>,
    lyap: Option<(&LyapunovParams, &SampledKernels)>,
) -> Result<SimTrace> {
    config.validate()?;
    let state0 = init_state(config, system, bilayer)?;
    run_from(system, kernels, config, state0, lyap)
}

/// As [`run`], starting from a given state.
pub fn run_from(
    system: &HeteroSystem,
    kernels: &SampledKernels,
    config: &SimConfig,
    mut state: RiemannState,
    lyap: Option<(&LyapunovParams, &SampledKernels)>,
) -> Result<SimTrace> {
    config.validate()?;
    system.validate().into_result()?;
    let grid = config.grid;
    state.check_grid(grid)?;
    let coef = CellCoefficients::new(system, grid);
    let (steps, dt) = config.time_step(coef.lambda_max);
    check_cfl(dt, coef.lambda_max, grid)?;
    let (lr, ll) = (coef.lr.clone(), coef.ll.clone());

    let mut trace = SimTrace {
        grid,
        dt,
        steps,
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
        norms: Vec::new(),
        total: Vec::new(),
        v: lyap.map(|_| Vec::new()),
        beta_one: Vec::new(),
        beta_bound: Vec::new(),
        labels: system.labels.clone(),
        n: system.n,
        m: system.m,
    };

    let t0 = state.t;
    for k in 0..=steps {
        let control = if config.controller_on {
            control_input(kernels, &state, &system.r1)?
        } else {
            DVector::zeros(system.m)
        };
        let v_one = boundary_v(&state, system, Some(&control));
        if k % config.output_every == 0 || k == steps {
            record(&mut trace, &state, &control, &v_one, kernels, lyap, &lr, &ll)?;
        }
        if k == steps {
            break;
        }
        state = upwind_step(&state, &coef, &system.q0, &v_one, dt, grid);
        state.t = t0 + (k + 1) as f64 * dt;
        if !state.is_finite() {
            return Err(Error::BlowUp { t: state.t });
        }
    }
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn record(
    trace: &mut SimTrace,
    state: &RiemannState,
    control: &DVector<f64>,
    v_one: &DVector<f64>,
    kernels: &SampledKernels,
    lyap: Option<(&LyapunovParams, &SampledKernels)>,
    lr: &[Vec<f64>],
    ll: &[Vec<f64>],
) -> Result<()> {
    let grid = trace.grid;
    let norms = l2_norms(state, grid);
    trace.total.push(total_norm(&norms));
    trace.norms.push(norms);
    trace.times.push(state.t);
    trace.controls.push(control.iter().copied().collect());
    let (beta, bound) = beta_at_one(kernels, state, v_one)?;
    trace.beta_one.push(beta.amax());
    trace.beta_bound.push(bound.amax());
    if let (Some((params, sk)), Some(vs)) = (lyap, trace.v.as_mut()) {
        let z = crate::controller::to_target(sk, state)?;
        vs.push(evaluate_v_with(params, &z, lr, ll, grid));
    }
    trace.states.push(state.clone());
    Ok(())
}

/// Envelope `A e^{-σ t}` bounding `y` at every sample, with `σ` from a
/// log-linear fit. `None` when fewer than two positive samples exist.
pub fn exponential_envelope(times: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let sigma = crate::lyapunov::log_linear_rate(times, y)?;
    let a = times
        .iter()
        .zip(y)
        .map(|(t, v)| v * (sigma * t).exp())
        .fold(0.0, f64::max);
    Some((a, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_transport(q0: f64, r1: f64) -> HeteroSystem {
        HeteroSystem::transport(
            &[1.0],
            &[1.0],
            DMatrix::from_element(1, 1, q0),
            DMatrix::from_element(1, 1, r1),
        )
    }

    fn config(nx: usize, cfl: f64, t: f64, controller_on: bool) -> SimConfig {
        SimConfig {
            grid: SimGrid::new(nx).unwrap(),
            cfl,
            t_final: t,
            output_every: 1,
            profile: InitialProfile::RiemannBump {
                amplitude: 1.0,
                center: 0.5,
                width: 0.01,
            },
            controller_on,
        }
    }

    #[test]
    fn profile_midpoint() {
        let w = reference_profile(0.5);
        assert_relative_eq!(w[2], 2.5, epsilon = 1e-14);
        assert_relative_eq!(w[0], 3.5, epsilon = 1e-14);
    }

    #[test]
    fn unit_courant_shifts_exactly() {
        let sys = scalar_transport(0.0, 0.0);
        let g = SimGrid::new(32).unwrap();
        let mut s = RiemannState::zeros(1, 1, g);
        s.u[0][5] = 1.0;
        s.v[0][20] = 2.0;
        let next = step(&s, &sys, None, g.dx(), g).unwrap();
        assert_eq!(next.u[0][6], 1.0);
        assert_eq!(next.u[0][5], 0.0);
        assert_eq!(next.v[0][19], 2.0);
        assert_eq!(next.v[0][20], 0.0);
    }

    #[test]
    fn cfl_violation_is_rejected() {
        let sys = scalar_transport(0.0, 0.0);
        let g = SimGrid::new(32).unwrap();
        let s = RiemannState::zeros(1, 1, g);
        assert!(matches!(step(&s, &sys, None, 1.5 * g.dx(), g), Err(Error::Cfl { .. })));
    }

    #[test]
    fn zero_state_is_equilibrium() {
        let sys = scalar_transport(0.5, 0.5);
        let g = SimGrid::new(32).unwrap();
        let s = RiemannState::zeros(1, 1, g);
        let next = step(&s, &sys, Some(&DVector::zeros(1)), 0.5 * g.dx(), g).unwrap();
        assert!(next.components().all(|c| c.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn open_boundaries_empty_the_domain() {
        let sys = scalar_transport(0.0, 0.0);
        let cfg = config(64, 1.0, 1.5, false);
        let sk = SampledKernels::zeros(1, 1, cfg.grid);
        let tr = run(&sys, &sk, &cfg, None, None).unwrap();
        for (t, n) in tr.times.iter().zip(&tr.total) {
            if *t >= 1.0 + tr.dt {
                assert!(*n <= 1e-12, "t = {t}: {n}");
            }
        }
    }

    #[test]
    fn dead_beat_with_feedback() {
        let sys = scalar_transport(0.8, 0.9);
        let cfg = config(50, 1.0, 3.0, true);
        let sk = SampledKernels::zeros(1, 1, cfg.grid);
        let tr = run(&sys, &sk, &cfg, None, None).unwrap();
        for (t, n) in tr.times.iter().zip(&tr.total) {
            if *t >= 2.0 + 2.0 * tr.dt {
                assert!(*n <= 1e-8, "t = {t}: {n}");
            }
        }
        let off = run(&sys, &sk, &config(50, 1.0, 3.0, false), None, None).unwrap();
        assert!(off.total.last().unwrap() > &1e-3);
    }

    #[test]
    fn doubled_data_doubles_trajectory() {
        let sys = HeteroSystem::constant(
            &[1.0, 1.7],
            &[1.3, 0.6],
            &DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.1, 0.0]),
            &DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.1, -0.2]),
            &DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.3, 0.4]),
            DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.0, 0.3]),
        );
        let cfg = config(40, 0.9, 0.5, true);
        let sk = SampledKernels::zeros(2, 2, cfg.grid);
        let s0 = init_state(&cfg, &sys, None).unwrap();
        let a = run_from(&sys, &sk, &cfg, s0.clone(), None).unwrap();
        let b = run_from(&sys, &sk, &cfg, s0.scaled(2.0), None).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            for (cx, cy) in x.components().zip(y.components()) {
                for (p, q) in cx.iter().zip(cy) {
                    assert!((2.0 * p - q).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn envelope_bounds_samples() {
        let t: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|t| (-t).exp() * (1.0 + 0.3 * (7.0 * t).sin())).collect();
        let (a, s) = exponential_envelope(&t, &y).unwrap();
        assert!(s > 0.0);
        for (t, v) in t.iter().zip(&y) {
            assert!(*v <= a * (-s * t).exp() * (1.0 + 1e-12));
        }
    }
}
