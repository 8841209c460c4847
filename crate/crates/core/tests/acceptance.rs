//! Acceptance criteria 1-9, one `[PASS]` / `[FAIL]` line each.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sv_backstep::bilayer::{characteristic_speeds, PhysicalParams, SetPoint, SpeedMode};
use sv_backstep::commands::{self, dead_beat, run_simulation, solve_all, SimulationRun};
use sv_backstep::config::{preset, Experiment, PRESET_REFERENCE};
use sv_backstep::hetero::HeteroSystem;
use sv_backstep::kernel::{kernel_residuals, solve_kernels, KernelGrid};
use sv_backstep::lyapunov::{certify_decay, DEFAULT_CERT_TOL};
use sv_backstep::sim::{exponential_envelope, init_state, run_from};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn reference() -> Experiment {
    Experiment::build(preset(PRESET_REFERENCE).unwrap()).unwrap()
}

fn fmt_time(d: Duration) -> String {
    format!("{:.3} ms", d.as_secs_f64() * 1e3)
}

fn eigen_speeds() -> Outcome {
    let params = PhysicalParams::new(9.81, 0.0, 0.05).unwrap();
    let start = Instant::now();
    let speeds = characteristic_speeds(&SetPoint::reference(), &params, SpeedMode::ClosedFormR0);
    let elapsed = start.elapsed();
    let speeds = match speeds {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let expected = [-4.42, -2.18, 4.08, 6.42];
    let ok = speeds.iter().zip(expected).all(|(a, b)| (a - b).abs() <= 0.01);
    let fast = elapsed < Duration::from_millis(1);
    outcome(
        ok && fast,
        format!("speeds {speeds:.4?} vs {expected:?}, runtime {}", fmt_time(elapsed)),
    )
}

fn round_trip() -> Outcome {
    let exp = reference();
    let basis = exp.basis.as_ref().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let u = Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let back = basis.from_riemann(&basis.to_riemann(&u));
        worst = worst.max((back - u).norm() / u.norm());
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && elapsed < Duration::from_secs(1),
        format!("1000 states, max relative error {worst:.2e}, runtime {}", fmt_time(elapsed)),
    )
}

fn kernel_correctness() -> Outcome {
    let start = Instant::now();
    let exp = reference();
    let sys = &exp.system;

    // (a) all couplings zero, reflections kept.
    let z2 = DMatrix::zeros(2, 2);
    let decoupled = HeteroSystem::constant(
        &[sys.lr(0, 0.0), sys.lr(1, 0.0)],
        &[sys.ll(0, 0.0), sys.ll(1, 0.0)],
        &z2,
        &z2,
        &z2,
        sys.q0.clone(),
        sys.r1.clone(),
    );
    let zero = solve_kernels(&decoupled, KernelGrid::new(200).unwrap(), 1e-8, 200).unwrap();
    let a_ok = zero.k.iter().chain(&zero.l).all(|f| f.values().iter().all(|v| *v == 0.0))
        && zero.delta.iter().all(|d| d.iter().all(|v| *v == 0.0));

    // (b), (c) on the reference kernels.
    let mut res = Vec::new();
    let mut c_ok = true;
    let mut diag_exact = true;
    let mut maxk: f64 = 0.0;
    for n in [100, 200] {
        let grid = KernelGrid::new(n).unwrap();
        let set = solve_kernels(sys, grid, 1e-8, 200).unwrap();
        let r = kernel_residuals(&set, sys, grid);
        maxk = maxk.max(set.k.iter().chain(&set.l).map(|f| f.max_abs()).fold(0.0, f64::max));
        if n == 200 {
            // G21(x,x) = -So/(λl+λr) node by node.
            for i in 0..set.m {
                for j in 0..set.n {
                    for a in 0..=n {
                        let x = grid.x(a);
                        let want = -sys.so.entry(i, j, x) / (sys.ll(i, x) + sys.lr(j, x));
                        diag_exact &= set.g21(i, j).get(a, a) == want;
                    }
                }
            }
            for d in &set.delta {
                for i in 0..set.m {
                    for j in i..set.m {
                        c_ok &= d[(i, j)].to_bits() == 0;
                    }
                }
            }
        }
        res.push(r.interior_max);
    }
    // Exact zero at both resolutions counts as converged.
    let b_ok = diag_exact && ((res[0] == 0.0 && res[1] == 0.0) || res[1] * 1.5 <= res[0]);
    let elapsed = start.elapsed();
    outcome(
        a_ok && b_ok && c_ok && elapsed < Duration::from_secs(120),
        format!(
            "(a) zero kernels {a_ok}; (b) diagonal exact {diag_exact}, interior residual N=100 {:.2e} -> N=200 {:.2e} (max|kernel| {maxk:.1e}); (c) upper Δ bitwise zero {c_ok}; runtime {:.2} s",
            res[0],
            res[1],
            elapsed.as_secs_f64()
        ),
    )
}

/// Refinement on a smooth coupled scalar system, reported next to (b)
/// since the reference kernels vanish identically.
fn kernel_refinement_supplement() -> String {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    let sys = HeteroSystem::constant(&[1.5], &[1.0], &m(0.4), &m(0.6), &m(1.0), m(0.5), m(0.3));
    let r: Vec<f64> = [100, 200]
        .iter()
        .map(|&n| {
            let grid = KernelGrid::new(n).unwrap();
            kernel_residuals(&solve_kernels(&sys, grid, 1e-12, 500).unwrap(), &sys, grid).interior_max
        })
        .collect();
    format!(
        "smooth scalar system: interior residual N=100 {:.3e} -> N=200 {:.3e} (ratio {:.2})",
        r[0],
        r[1],
        r[0] / r[1]
    )
}

fn closed_loop_decay(run: &SimulationRun, elapsed: Duration) -> Outcome {
    let tr = &run.trace;
    let ratio = tr.total.last().unwrap() / tr.total[0];
    let mut env_ok = true;
    let mut rates = Vec::new();
    for label in 1..=4 {
        let y = tr.norm_by_label(label).unwrap();
        match exponential_envelope(&tr.times, &y) {
            Some((a, sigma)) => {
                let bounded = tr
                    .times
                    .iter()
                    .zip(&y)
                    .all(|(t, v)| *v <= a * (-sigma * t).exp() * (1.0 + 1e-12));
                env_ok &= sigma > 0.0 && bounded;
                rates.push(sigma);
            }
            None => {
                env_ok = false;
                rates.push(f64::NAN);
            }
        }
    }
    outcome(
        ratio <= 0.01 && env_ok && elapsed < Duration::from_secs(60),
        format!(
            "Nx={} T={}: norm(T)/norm(0) = {ratio:.2e}; envelope rates by label {rates:.3?}; runtime {:.2} s",
            tr.grid.nx,
            tr.times.last().unwrap(),
            elapsed.as_secs_f64()
        ),
    )
}

fn control_decay(run: &SimulationRun) -> Outcome {
    let tr = &run.trace;
    let ctrl = tr.controls_by_label();
    let check = |c: &[f64], from: f64| {
        let peak = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let late = tr
            .times
            .iter()
            .zip(c)
            .filter(|(t, _)| **t >= from)
            .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
        (late <= 0.05 * peak, peak, late)
    };
    let (ok2, p2, l2) = check(&ctrl[1], 4.0);
    let (ok1, p1, l1) = check(&ctrl[0], 7.0);
    outcome(
        ok1 && ok2,
        format!("u2 peak {p2:.3e}, max for t>=4 {l2:.2e}; u1 peak {p1:.3e}, max for t>=7 {l1:.2e}"),
    )
}

fn target_boundary(run: &SimulationRun) -> Outcome {
    let tr = &run.trace;
    let mut worst_excess: f64 = 0.0;
    let mut ok = true;
    for (b, bound) in tr.beta_one.iter().zip(&tr.beta_bound) {
        ok &= *b <= 10.0 * bound;
        worst_excess = worst_excess.max(b - 10.0 * bound);
    }
    let max_beta = tr.beta_one.iter().fold(0.0f64, |m, v| m.max(*v));
    let max_bound = tr.beta_bound.iter().fold(0.0f64, |m, v| m.max(*v));
    outcome(
        ok,
        format!(
            "{} samples: max |β(t,1)| {max_beta:.2e}, max bound {max_bound:.2e}, worst excess {worst_excess:.2e}",
            tr.times.len()
        ),
    )
}

fn dead_beat_oracle() -> Outcome {
    match dead_beat() {
        Ok((horizon, on, off)) => outcome(
            on <= 1e-8 && off > 1e-8,
            format!("by t = {horizon:.4}: with feedback {on:.2e}, open loop {off:.2e}"),
        ),
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn lyapunov_certificate(exp: &Experiment, run: &SimulationRun) -> Outcome {
    let (lo, hi) = commands::sandwich(&run.params, exp, exp.config.sim.grid, 1000);
    let sandwich_ok = lo >= 1.0 && hi <= 1.0;
    let rep = certify_decay(&run.params, &run.trace, &run.sampled, &exp.system, DEFAULT_CERT_TOL).unwrap();
    let stepwise = rep.violations == 0 && rep.worst_ratio <= 1.0 + DEFAULT_CERT_TOL;
    let rate_ok = rep.fitted_rate.is_some_and(|r| r > 0.0);
    outcome(
        sandwich_ok && stepwise && rate_ok,
        format!(
            "min V/(C1|z|^2) {lo:.4}, max V/(C2|z|^2) {hi:.4}; worst V ratio {:.4} over {} steps; fitted rate {:?}, c = {:.4}",
            rep.worst_ratio,
            rep.v.len() - 1,
            rep.fitted_rate,
            rep.theoretical_c
        ),
    )
}

fn linearity_determinism(exp: &Experiment, run: &SimulationRun) -> Outcome {
    let cfg = &exp.config.sim;
    let s0 = init_state(cfg, &exp.system, exp.bilayer()).unwrap();
    let a = run_from(&exp.system, &run.sampled, cfg, s0.clone(), None).unwrap();
    let b = run_from(&exp.system, &run.sampled, cfg, s0.scaled(2.0), None).unwrap();
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for (sa, sb) in a.states.iter().zip(&b.states) {
        for (ca, cb) in sa.components().zip(sb.components()) {
            for (x, y) in ca.iter().zip(cb) {
                err = err.max((2.0 * x - y).abs());
                scale = scale.max((2.0 * x).abs());
            }
        }
    }
    let rel = err / scale;

    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        commands::simulate(exp, d.path()).unwrap();
        commands::kernels(exp, d.path()).unwrap();
    }
    let same = |name: &str| {
        std::fs::read(dirs[0].path().join(name)).unwrap() == std::fs::read(dirs[1].path().join(name)).unwrap()
    };
    let det = same("trace.csv") && same("kernels.csv") && same("delta.csv");
    outcome(
        rel <= 1e-12 && det,
        format!("max |z(2 z0) - 2 z(z0)| / max|2z| = {rel:.2e}; identical CSV bytes {det}"),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |k: usize, name: &str, o: Outcome| {
        all &= o.passed;
        println!("[{}] {k}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "eigen speeds", eigen_speeds());
    report(2, "riemann round trip", round_trip());
    report(3, "kernel correctness", kernel_correctness());
    println!("       supplement: {}", kernel_refinement_supplement());

    let exp = reference();
    let start = Instant::now();
    let run = run_simulation(&exp, solve_all(&exp).unwrap()).unwrap();
    let elapsed = start.elapsed();
    report(4, "closed-loop decay", closed_loop_decay(&run, elapsed));
    report(5, "control-signal decay", control_decay(&run));
    report(6, "target boundary consistency", target_boundary(&run));
    report(7, "dead-beat oracle", dead_beat_oracle());
    report(8, "lyapunov certificate", lyapunov_certificate(&exp, &run));
    report(9, "linearity and determinism", linearity_determinism(&exp, &run));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
