//! The four command-line verbs. Each returns a plain-text summary and
//! writes its files under the output directory.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{preset, Experiment, PRESET_TRIVIAL};
use crate::controller::SampledKernels;
use crate::error::{Error, Result};
use crate::io;
use crate::kernel::{kernel_residuals, solve_kernels, KernelGrid, KernelSet};
use crate::lyapunov::{certify_decay, choose_params, evaluate_v, LyapunovParams, DEFAULT_CERT_TOL};
use crate::sim::{self, SimConfig, SimTrace};
use crate::state::{l2_norms, total_norm, RiemannState, SimGrid};

const SEED: u64 = 0x5eed_2024;
const RANDOM_SAMPLES: usize = 1000;
/// Largest admissible residual growth per grid halving.
const JUMP_GROWTH: f64 = 2.2;

/// Seeded fault for `verify --inject-fault`: `+0.1` on `G21_11` at one
/// interior node.
pub const FAULT_AMOUNT: f64 = 0.1;

pub fn fault_node(grid: KernelGrid) -> (usize, usize) {
    (3 * grid.n / 5, grid.n / 4)
}

/// `G21`, `G22`, `Δ` and `C^r`, `C^l` on the configured lattice.
pub fn solve_all(exp: &Experiment) -> Result<KernelSet> {
    let k = &exp.config.kernel;
    solve_kernels(&exp.system, exp.kernel_grid()?, k.tol, k.max_iter)?.with_c(&exp.system, k.tol, k.max_iter)
}

pub fn kernels(exp: &Experiment, out: &Path) -> Result<String> {
    let start = Instant::now();
    let set = solve_all(exp)?;
    let grid = exp.kernel_grid()?;
    let res = kernel_residuals(&set, &exp.system, grid);
    io::write_kernels_csv(&set, io::create_file(out, io::KERNELS_FILE)?)?;
    io::write_delta_csv(&set, io::create_file(out, io::DELTA_FILE)?)?;

    let mut s = String::new();
    writeln!(s, "grid              N = {}", grid.n).unwrap();
    writeln!(s, "picard_iterations {}", set.iterations).unwrap();
    writeln!(s, "last_change       {:.3e}", set.last_change).unwrap();
    writeln!(s, "c_iterations      {}", set.c_iterations).unwrap();
    writeln!(s, "max|G21|          {:.6e}", set.k.iter().map(|f| f.max_abs()).fold(0.0, f64::max)).unwrap();
    writeln!(s, "max|G22|          {:.6e}", set.l.iter().map(|f| f.max_abs()).fold(0.0, f64::max)).unwrap();
    writeln!(s, "{res}").unwrap();
    writeln!(s, "elapsed_s         {:.3}", start.elapsed().as_secs_f64()).unwrap();
    io::write_text(out, "residuals.txt", &s)?;
    Ok(s)
}

/// Closed-loop (or open-loop) simulation with Lyapunov bookkeeping.
pub struct SimulationRun {
    pub kernels: KernelSet,
    pub sampled: SampledKernels,
    pub params: LyapunovParams,
    pub trace: SimTrace,
}

pub fn run_simulation(exp: &Experiment, kernels: KernelSet) -> Result<SimulationRun> {
    let sampled = SampledKernels::new(&kernels, exp.config.sim.grid);
    let params = choose_params(&exp.system, &kernels)?;
    let trace = sim::run(
        &exp.system,
        &sampled,
        &exp.config.sim,
        exp.bilayer(),
        Some((&params, &sampled)),
    )?;
    Ok(SimulationRun {
        kernels,
        sampled,
        params,
        trace,
    })
}

pub fn simulate(exp: &Experiment, out: &Path) -> Result<String> {
    let start = Instant::now();
    let run = run_simulation(exp, solve_all(exp)?)?;
    let trace = &run.trace;
    io::write_trace_csv(trace, io::create_file(out, io::TRACE_FILE)?)?;
    if exp.config.snapshots {
        let dir = out.join("snapshots");
        for (k, state) in trace.states.iter().enumerate() {
            let f = io::create_file(&dir, &format!("snap_{k:05}.csv"))?;
            io::write_snapshot_csv(state, &trace.labels, exp.bilayer(), f)?;
        }
    }
    let report = certify_decay(&run.params, trace, &run.sampled, &exp.system, DEFAULT_CERT_TOL)?;

    let mut s = String::new();
    let (first, last) = (trace.total[0], *trace.total.last().unwrap());
    writeln!(s, "controller        {}", if exp.config.sim.controller_on { "on" } else { "off" }).unwrap();
    writeln!(s, "cells             {}", trace.grid.nx).unwrap();
    writeln!(s, "dt                {:.6e}", trace.dt).unwrap();
    writeln!(s, "steps             {}", trace.steps).unwrap();
    writeln!(s, "norm(0)           {first:.6e}").unwrap();
    writeln!(s, "norm(T)           {last:.6e}").unwrap();
    writeln!(s, "norm(T)/norm(0)   {:.6e}", if first > 0.0 { last / first } else { 0.0 }).unwrap();
    writeln!(s, "-- lyapunov").unwrap();
    writeln!(s, "{}", run.params).unwrap();
    writeln!(s, "-- decay").unwrap();
    writeln!(s, "{report}").unwrap();
    writeln!(s, "elapsed_s         {:.3}", start.elapsed().as_secs_f64()).unwrap();
    io::write_text(out, "decay_report.txt", &s)?;
    Ok(s)
}

/// Summary of an existing trace CSV.
pub fn report(trace_path: &Path, out: Option<&Path>) -> Result<String> {
    let table = io::read_trace_csv(trace_path)?;
    if table.rows.is_empty() {
        return Err(Error::Input(format!("{} has no samples", trace_path.display())));
    }
    let col = |name: &str| -> Vec<f64> {
        table.column(name).unwrap_or_default().into_iter().flatten().collect()
    };
    let t = col("t");
    let total = col("total_norm");
    let mut s = String::new();
    writeln!(s, "samples           {}", table.rows.len()).unwrap();
    writeln!(s, "t                 [{}, {}]", t[0], t[t.len() - 1]).unwrap();
    let (a, b) = (total[0], total[total.len() - 1]);
    writeln!(s, "total_norm(0)     {a:.6e}").unwrap();
    writeln!(s, "total_norm(T)     {b:.6e}").unwrap();
    writeln!(s, "ratio             {:.6e}", if a > 0.0 { b / a } else { 0.0 }).unwrap();
    match crate::lyapunov::log_linear_rate(&t, &total) {
        Some(r) => writeln!(s, "norm_fit_rate     {r:.6}").unwrap(),
        None => writeln!(s, "norm_fit_rate     n/a").unwrap(),
    }
    for name in table.columns_with_suffix("_norm") {
        if name == "total_norm" {
            continue;
        }
        let v = col(&name);
        writeln!(s, "{name:<18}{:.6e} -> {:.6e}", v[0], v[v.len() - 1]).unwrap();
    }
    for name in table.columns_with_suffix("_ctrl") {
        let v = col(&name);
        let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let last_above = t
            .iter()
            .zip(&v)
            .filter(|(_, x)| x.abs() > 0.05 * peak)
            .map(|(t, _)| *t)
            .fold(f64::NEG_INFINITY, f64::max);
        writeln!(s, "{name:<18}peak {peak:.6e}, last above 5% of peak at t = {last_above:.4}").unwrap();
    }
    let v = col("V");
    if v.len() >= 2 {
        writeln!(s, "V                 {:.6e} -> {:.6e}", v[0], v[v.len() - 1]).unwrap();
        let tv: Vec<f64> = table
            .rows
            .iter()
            .zip(table.column("V").unwrap())
            .filter_map(|(r, v)| v.and(r[0]))
            .collect();
        if let Some(r) = crate::lyapunov::log_linear_rate(&tv, &v) {
            writeln!(s, "V_fit_rate        {r:.6}").unwrap();
        }
    }
    if let Some(dir) = out {
        io::write_text(dir, "report.txt", &s)?;
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        log::info!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }

    /// Records a check whose evaluation itself failed.
    fn push_result(&mut self, name: &str, r: Result<(bool, String)>) {
        match r {
            Ok((p, d)) => self.push(name, p, d),
            Err(e) => self.push(name, false, format!("error: {e}")),
        }
    }
}

impl std::fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

fn eigen_check(exp: &Experiment) -> Result<(bool, String)> {
    let (model, basis) = match (&exp.model, &exp.basis) {
        (Some(m), Some(b)) => (m, b),
        _ => return Ok((true, "no physical model".into())),
    };
    let a = &model.astar;
    let scale = a.norm();
    let mut worst: f64 = 0.0;
    for s in 0..4 {
        let lam = basis.lambdas[s];
        let r = basis.r.column(s);
        let l = basis.l.row(s);
        worst = worst.max((a * r - r * lam).norm() / (scale * r.norm()));
        worst = worst.max((l * a - l * lam).norm() / (scale * l.norm()));
    }
    let biorth = (basis.l * basis.r - Matrix4::identity()).amax();
    Ok((
        worst <= 1e-10 && biorth <= 1e-10,
        format!("max eigen residual {worst:.2e}, |LR - I| {biorth:.2e}"),
    ))
}

fn round_trip_check(exp: &Experiment) -> Result<(bool, String)> {
    let basis = match &exp.basis {
        Some(b) => b,
        None => return Ok((true, "no physical model".into())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst: f64 = 0.0;
    for _ in 0..RANDOM_SAMPLES {
        let u = Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let back = basis.from_riemann(&basis.to_riemann(&u));
        worst = worst.max((back - u).norm() / u.norm());
    }
    Ok((worst <= 1e-10, format!("{RANDOM_SAMPLES} states, max relative error {worst:.2e}")))
}

fn coupling_check(exp: &Experiment) -> Result<(bool, String)> {
    let (model, basis) = match (&exp.model, &exp.basis) {
        (Some(m), Some(b)) => (m, b),
        _ => return Ok((true, "no physical model".into())),
    };
    let cm = crate::bilayer::coupling_matrices(model, basis);
    let sv = cm.m.singular_values();
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let rel = if sorted[0] > 0.0 { sorted[1] / sorted[0] } else { 0.0 };
    Ok((rel <= 1e-10, format!("rank-one coupling, sigma2/sigma1 = {rel:.2e}")))
}

fn residual_check(
    exp: &Experiment,
    fine: &KernelSet,
    out: &mut VerifyReport,
) -> Result<()> {
    let grid = fine.grid;
    let res = kernel_residuals(fine, &exp.system, grid);
    let tol = exp.config.kernel.tol;
    let scale = 1.0 + fine.k.iter().chain(&fine.l).map(|f| f.max_abs()).fold(0.0, f64::max);
    out.push(
        "kernel diagonal condition",
        res.bc_diagonal <= 1e-12 * scale,
        format!("max {:.2e}", res.bc_diagonal),
    );
    out.push(
        "kernel boundary conditions",
        res.bc_boundary <= 100.0 * tol * scale && res.bc_commutator <= 100.0 * tol * scale,
        format!("xi=0 {:.2e}, commutator {:.2e}", res.bc_boundary, res.bc_commutator),
    );
    out.push(
        "delta strictly lower triangular",
        res.delta_upper == 0.0,
        format!("upper-triangle max {:.2e}", res.delta_upper),
    );
    let coarse_grid = KernelGrid::new(grid.n / 2)?;
    let coarse = solve_kernels(&exp.system, coarse_grid, tol, exp.config.kernel.max_iter)?;
    let cres = kernel_residuals(&coarse, &exp.system, coarse_grid);
    let (rc, rf) = (cres.interior_max, res.interior_max);
    // Smooth kernels converge (ratio >= 1.5). A jump carried along a
    // characteristic from the corner (incompatible corner data) grows the
    // central-difference residual like 1/h, so at most ~2x per halving;
    // an isolated bad node has no coarse counterpart and exceeds both.
    let negligible = 1e-10 * scale;
    let (passed, regime) = if rc <= negligible && rf <= negligible {
        (true, "exact")
    } else if rf * 1.5 <= rc {
        (true, "converging")
    } else if rf <= JUMP_GROWTH * rc {
        (true, "jump-limited")
    } else {
        (false, "anomalous")
    };
    let loc = res
        .interior_location
        .as_ref()
        .map(|(x, xi, c)| format!(" (worst {c} at x={x:.3}, xi={xi:.3})"))
        .unwrap_or_default();
    out.push(
        "kernel interior residual refinement",
        passed,
        format!("{regime}: N={} {rc:.2e}, N={} {rf:.2e}{loc}", coarse_grid.n, grid.n),
    );
    Ok(())
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, m: usize, grid: SimGrid) -> RiemannState {
    let mut s = RiemannState::zeros(n, m, grid);
    for c in s.u.iter_mut().chain(s.v.iter_mut()) {
        for v in c.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    s
}

/// `C1 ‖z‖² <= V(z) <= C2 ‖z‖²` on seeded random states; returns the
/// worst lower and upper slack ratios.
pub fn sandwich(params: &LyapunovParams, exp: &Experiment, grid: SimGrid, samples: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 0xa5a5);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..samples {
        let z = random_state(&mut rng, exp.system.n, exp.system.m, grid);
        let norm2 = total_norm(&l2_norms(&z, grid)).powi(2);
        let v = evaluate_v(params, &z, &exp.system, grid);
        lo = lo.min(v / (params.c1 * norm2));
        hi = hi.max(v / (params.c2 * norm2));
    }
    (lo, hi)
}

/// Settling time bound `1/λ̲_l + 1/λ̲_r + 2 dt` and the norms reached by it
/// with and without feedback, on the trivial preset.
pub fn dead_beat() -> Result<(f64, f64, f64)> {
    let exp = Experiment::build(preset(PRESET_TRIVIAL)?)?;
    let set = solve_all(&exp)?;
    let mut cfg = exp.config.sim.clone();
    let (lam_r, lam_l) = exp.system.slowest_speeds(64);
    let (_, lam_max) = exp.system.speed_bounds()?;
    let (_, dt) = cfg.time_step(lam_max);
    let horizon = 1.0 / lam_l + 1.0 / lam_r + 2.0 * dt;
    let grid = cfg.grid;
    cfg.t_final = horizon;
    let (_, dt) = cfg.time_step(lam_max);
    let sampled = SampledKernels::new(&set, grid);
    let on = sim::run(&exp.system, &sampled, &cfg, None, None)?;
    cfg.controller_on = false;
    let off = sim::run(&exp.system, &sampled, &cfg, None, None)?;
    let settle = |tr: &SimTrace| {
        tr.times
            .iter()
            .zip(&tr.total)
            .filter(|(t, _)| **t >= horizon - dt * 0.5)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    };
    Ok((horizon, settle(&on), settle(&off)))
}

fn linearity_check(exp: &Experiment, sampled: &SampledKernels) -> Result<(bool, String)> {
    let mut cfg: SimConfig = exp.config.sim.clone();
    cfg.t_final = cfg.t_final.min(0.5);
    cfg.controller_on = true;
    let s0 = sim::init_state(&cfg, &exp.system, exp.bilayer())?;
    let a = sim::run_from(&exp.system, sampled, &cfg, s0.clone(), None)?;
    let b = sim::run_from(&exp.system, sampled, &cfg, s0.scaled(2.0), None)?;
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (sa, sb) in a.states.iter().zip(&b.states) {
        for (ca, cb) in sa.components().zip(sb.components()) {
            for (x, y) in ca.iter().zip(cb) {
                worst = worst.max((2.0 * x - y).abs());
                scale = scale.max(x.abs());
            }
        }
    }
    let rel = if scale > 0.0 { worst / scale } else { worst };
    Ok((rel <= 1e-12, format!("max |2 z - z_2| / max|z| = {rel:.2e} over t <= {}", cfg.t_final)))
}

fn cfl_check(exp: &Experiment) -> Result<(bool, String)> {
    let grid = exp.config.sim.grid;
    let (_, lam_max) = exp.system.speed_bounds()?;
    let dt = 2.0 * grid.dx() / lam_max;
    let s = RiemannState::zeros(exp.system.n, exp.system.m, grid);
    let rejected = matches!(sim::step(&s, &exp.system, None, dt, grid), Err(Error::Cfl { .. }));
    Ok((rejected, format!("step with twice the CFL limit rejected: {rejected}")))
}

/// Runs the invariant suite. Only errors that prevent checking at all are
/// returned as `Err`; failed checks are recorded in the report.
pub fn verify(exp: &Experiment, out: &Path, inject_fault: bool) -> Result<VerifyReport> {
    let mut rep = VerifyReport::default();
    let v = exp.system.validate();
    rep.push(
        "system hyperbolicity and ordering",
        v.passed,
        v.failure.clone().unwrap_or_else(|| format!("speeds in [{:.4}, {:.4}]", v.lambda_min, v.lambda_max)),
    );
    rep.push_result("eigen residuals", eigen_check(exp));
    rep.push_result("riemann round trip", round_trip_check(exp));
    rep.push_result("coupling matrix structure", coupling_check(exp));
    rep.push_result("cfl guard", cfl_check(exp));

    let mut set = solve_all(exp)?;
    if inject_fault {
        let (a, b) = fault_node(set.grid);
        set.perturb_g21(0, 0, a, b, FAULT_AMOUNT);
        log::warn!("injected fault: G21_11 += {FAULT_AMOUNT} at node ({a}, {b})");
    }
    rep.push(
        "kernels finite",
        set.is_finite(),
        format!("{} picard iterations, last change {:.2e}", set.iterations, set.last_change),
    );
    if let Err(e) = residual_check(exp, &set, &mut rep) {
        rep.push("kernel residuals", false, format!("error: {e}"));
    }

    let grid = exp.config.sim.grid;
    let sampled = SampledKernels::new(&set, grid);
    match choose_params(&exp.system, &set) {
        Ok(params) => {
            let (lo, hi) = sandwich(&params, exp, grid, RANDOM_SAMPLES);
            rep.push(
                "lyapunov sandwich",
                lo >= 1.0 - 1e-12 && hi <= 1.0 + 1e-12,
                format!("min V/(C1|z|^2) = {lo:.6}, max V/(C2|z|^2) = {hi:.6}"),
            );
            let mut exp_on = exp.clone();
            exp_on.config.sim.controller_on = true;
            let cert = sim::run(&exp.system, &sampled, &exp_on.config.sim, exp.bilayer(), Some((&params, &sampled)))
                .and_then(|tr| certify_decay(&params, &tr, &sampled, &exp.system, DEFAULT_CERT_TOL));
            rep.push_result(
                "closed-loop decay certificate",
                cert.map(|r| {
                    (
                        r.passed,
                        format!(
                            "worst ratio {:.4}, violations {}, fitted rate {}, c = {:.4}",
                            r.worst_ratio,
                            r.violations,
                            r.fitted_rate.map_or("n/a".into(), |v| format!("{v:.4}")),
                            r.theoretical_c
                        ),
                    )
                }),
            );
        }
        Err(e) => rep.push("lyapunov parameters", false, format!("error: {e}")),
    }
    rep.push_result("linearity", linearity_check(exp, &sampled));
    rep.push_result(
        "dead-beat settling",
        dead_beat().map(|(h, on, off)| {
            (
                on <= 1e-8 && off > 1e-8,
                format!("by t = {h:.4}: feedback {on:.2e}, open loop {off:.2e}"),
            )
        }),
    );
    io::write_text(out, "verify.txt", &format!("{rep}\n"))?;
    Ok(rep)
}
