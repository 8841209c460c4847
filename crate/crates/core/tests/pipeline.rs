use nalgebra::DMatrix;
use sv_backstep::commands::{run_simulation, solve_all};
use sv_backstep::config::{parse_config, Experiment};
use sv_backstep::controller::{control_input, to_target, SampledKernels};
use sv_backstep::hetero::HeteroSystem;
use sv_backstep::io::{read_trace_csv, write_trace_csv};
use sv_backstep::kernel::{solve_kernels, KernelGrid};
use sv_backstep::sim::{run, InitialProfile, SimConfig};
use sv_backstep::state::{l2_norms, total_norm, SimGrid};

fn coupled() -> HeteroSystem {
    let m = |r, c, v: &[f64]| DMatrix::from_row_slice(r, c, v);
    HeteroSystem::constant(
        &[1.0, 1.6],
        &[1.8, 1.2],
        &m(2, 2, &[0.1, 0.05, -0.05, 0.1]),
        &m(2, 2, &[0.1, 0.0, 0.05, 0.1]),
        &m(2, 2, &[0.3, -0.2, 0.1, 0.25]),
        m(2, 2, &[0.4, 0.1, -0.1, 0.3]),
        m(2, 2, &[0.5, 0.1, 0.15, -0.5]),
    )
}

fn bump(t_final: f64) -> SimConfig {
    SimConfig {
        grid: SimGrid::new(200).unwrap(),
        cfl: 0.9,
        t_final,
        output_every: 10,
        profile: InitialProfile::RiemannBump {
            amplitude: 1.0,
            center: 0.5,
            width: 0.02,
        },
        controller_on: true,
    }
}

#[test]
fn coupled_system_is_stabilized() {
    let sys = coupled();
    let kernels = solve_kernels(&sys, KernelGrid::new(60).unwrap(), 1e-10, 300).unwrap();
    assert!(kernels.k.iter().any(|f| f.max_abs() > 1e-3));
    let cfg = bump(8.0);
    let sk = SampledKernels::new(&kernels, cfg.grid);
    let closed = run(&sys, &sk, &cfg, None, None).unwrap();
    let mut open_cfg = cfg.clone();
    open_cfg.controller_on = false;
    let open = run(&sys, &sk, &open_cfg, None, None).unwrap();
    let (c0, c1) = (closed.total[0], *closed.total.last().unwrap());
    let o1 = *open.total.last().unwrap();
    assert!(c1 < 1e-3 * c0, "closed loop {c0} -> {c1}");
    assert!(o1 > 10.0 * c1, "open loop {o1} vs closed {c1}");
}

#[test]
fn target_norm_decreases() {
    let sys = coupled();
    let kernels = solve_kernels(&sys, KernelGrid::new(60).unwrap(), 1e-10, 300)
        .unwrap()
        .with_c(&sys, 1e-10, 300)
        .unwrap();
    let cfg = bump(0.5);
    let sk = SampledKernels::new(&kernels, cfg.grid);
    let tr = run(&sys, &sk, &cfg, None, None).unwrap();
    let z0 = to_target(&sk, &tr.states[0]).unwrap();
    let zt = to_target(&sk, tr.states.last().unwrap()).unwrap();
    assert!(total_norm(&l2_norms(&zt, cfg.grid)) < total_norm(&l2_norms(&z0, cfg.grid)));
}

#[test]
fn control_is_linear_in_state() {
    let sys = coupled();
    let kernels = solve_kernels(&sys, KernelGrid::new(40).unwrap(), 1e-10, 300).unwrap();
    let cfg = bump(0.2);
    let sk = SampledKernels::new(&kernels, cfg.grid);
    let tr = run(&sys, &sk, &cfg, None, None).unwrap();
    let s = tr.states.last().unwrap();
    let a = control_input(&sk, s, &sys.r1).unwrap();
    let b = control_input(&sk, &s.scaled(-3.0), &sys.r1).unwrap();
    assert!((b + a * 3.0).amax() < 1e-12);
}

#[test]
fn trace_csv_round_trip() {
    let cfg = parse_config("[sim]\nt_final = 0.3\nnx = 64\noutput_every = 5", Some("trivial-decoupled")).unwrap();
    let exp = Experiment::build(cfg).unwrap();
    let run = run_simulation(&exp, solve_all(&exp).unwrap()).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&run.trace, &mut buf).unwrap();
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("trace.csv");
    std::fs::write(&p, &buf).unwrap();
    let table = read_trace_csv(&p).unwrap();
    assert_eq!(table.rows.len(), run.trace.times.len());
    let total: Vec<f64> = table.column("total_norm").unwrap().into_iter().map(Option::unwrap).collect();
    assert_eq!(total, run.trace.total);
    let v: Vec<f64> = table.column("V").unwrap().into_iter().map(Option::unwrap).collect();
    assert_eq!(&v, run.trace.v.as_ref().unwrap());
}

#[test]
fn reference_trace_uses_label_order() {
    let cfg = parse_config("[sim]\nt_final = 0.05\nnx = 64", None).unwrap();
    let exp = Experiment::build(cfg).unwrap();
    let run = run_simulation(&exp, solve_all(&exp).unwrap()).unwrap();
    let mut buf = Vec::new();
    write_trace_csv(&run.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "t,xi1_norm,xi2_norm,xi3_norm,xi4_norm,total_norm,u1_ctrl,u2_ctrl,V"
    );
    // System slot 0 carries label 4.
    let first: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(first[4], run.trace.norms[0][0]);
}

#[test]
fn open_loop_reference_does_not_settle() {
    let cfg = parse_config("[sim]\nt_final = 2.0\nnx = 100\ncontroller = false", None).unwrap();
    let exp = Experiment::build(cfg).unwrap();
    let run = run_simulation(&exp, solve_all(&exp).unwrap()).unwrap();
    assert!(*run.trace.total.last().unwrap() > 1e-2 * run.trace.total[0]);
}
