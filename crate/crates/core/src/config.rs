//! Experiment configuration: sectioned TOML over a named preset.
//!
//! ```toml
//! preset = "paper-sec4"
//!
//! [physics]
//! r = 0.01
//!
//! [sim]
//! t_final = 2.5
//! ```
//!
//! Every key is optional; missing keys keep the preset value.

use std::path::PathBuf;

use nalgebra::{DMatrix, Matrix2};
use serde::Deserialize;

use crate::bilayer::{eigenbasis, linearize, EigenBasis, LinearModel, PhysicalParams, SetPoint};
use crate::error::{Error, Result};
use crate::hetero::{from_bilayer, HeteroSystem, VCoupling};
use crate::kernel::{KernelGrid, DEFAULT_GRID, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::sim::{BilayerContext, InitialProfile, SimConfig, DEFAULT_CELLS, DEFAULT_CFL, DEFAULT_OUTPUT_EVERY};
use crate::state::SimGrid;

pub const PRESET_REFERENCE: &str = "paper-sec4";
pub const PRESET_TRIVIAL: &str = "trivial-decoupled";

#[derive(Debug, Clone, PartialEq)]
pub enum SystemSpec {
    Bilayer { v_coupling: VCoupling },
    /// Constant-coefficient characteristic system given directly.
    Transport {
        lambda_r: Vec<f64>,
        lambda_l: Vec<f64>,
        sr: DMatrix<f64>,
        sl: DMatrix<f64>,
        so: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSettings {
    pub n: usize,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub physics: PhysicalParams,
    pub setpoint: SetPoint,
    /// Rightward-from-leftward reflection at `x = 0`.
    pub q0: DMatrix<f64>,
    /// Leftward-from-rightward reflection at `x = 1`.
    pub r1: DMatrix<f64>,
    pub system: SystemSpec,
    pub kernel: KernelSettings,
    pub sim: SimConfig,
    pub out_dir: Option<PathBuf>,
    pub snapshots: bool,
}

fn reference() -> ExperimentConfig {
    ExperimentConfig {
        preset: PRESET_REFERENCE.into(),
        physics: PhysicalParams::default(),
        setpoint: SetPoint::reference(),
        q0: DMatrix::from_row_slice(2, 2, &[-1.5, 0.01, 0.01, 1.5]),
        r1: DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.15, -0.5]),
        system: SystemSpec::Bilayer {
            v_coupling: VCoupling::Drop,
        },
        kernel: KernelSettings {
            n: DEFAULT_GRID,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        },
        sim: SimConfig {
            grid: SimGrid { nx: DEFAULT_CELLS },
            cfl: DEFAULT_CFL,
            t_final: 10.0,
            output_every: DEFAULT_OUTPUT_EVERY,
            profile: InitialProfile::ReferenceBump,
            controller_on: true,
        },
        out_dir: None,
        snapshots: false,
    }
}

fn trivial() -> ExperimentConfig {
    ExperimentConfig {
        preset: PRESET_TRIVIAL.into(),
        q0: DMatrix::from_element(1, 1, 0.8),
        r1: DMatrix::from_element(1, 1, 0.9),
        system: SystemSpec::Transport {
            lambda_r: vec![1.0],
            lambda_l: vec![1.0],
            sr: DMatrix::zeros(1, 1),
            sl: DMatrix::zeros(1, 1),
            so: DMatrix::zeros(1, 1),
        },
        kernel: KernelSettings {
            n: 32,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        },
        sim: SimConfig {
            grid: SimGrid { nx: 100 },
            cfl: 1.0,
            t_final: 3.0,
            output_every: 1,
            profile: InitialProfile::RiemannBump {
                amplitude: 1.0,
                center: 0.5,
                width: 0.01,
            },
            controller_on: true,
        },
        ..reference()
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        PRESET_REFERENCE => Ok(reference()),
        PRESET_TRIVIAL => Ok(trivial()),
        other => Err(Error::Configuration(format!(
            "unknown preset {other:?} (known: {PRESET_REFERENCE}, {PRESET_TRIVIAL})"
        ))),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    physics: Option<RawPhysics>,
    setpoint: Option<RawSetpoint>,
    boundary: Option<RawBoundary>,
    system: Option<RawSystem>,
    kernel: Option<RawKernel>,
    sim: Option<RawSim>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhysics {
    g: Option<f64>,
    r: Option<f64>,
    cf: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSetpoint {
    h1: Option<f64>,
    u1: Option<f64>,
    h2: Option<f64>,
    u2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBoundary {
    q0: Option<Vec<Vec<f64>>>,
    r1: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    kind: Option<String>,
    v_coupling: Option<VCoupling>,
    lambda_r: Option<Vec<f64>>,
    lambda_l: Option<Vec<f64>>,
    sr: Option<Vec<Vec<f64>>>,
    sl: Option<Vec<Vec<f64>>>,
    so: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    n: Option<usize>,
    tol: Option<f64>,
    max_iter: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    nx: Option<usize>,
    cfl: Option<f64>,
    t_final: Option<f64>,
    output_every: Option<usize>,
    controller: Option<bool>,
    profile: Option<String>,
    profile_path: Option<PathBuf>,
    bump_amplitude: Option<f64>,
    bump_center: Option<f64>,
    bump_width: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    snapshots: Option<bool>,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension(format!("{name} must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn check_shape(name: &str, m: &DMatrix<f64>, shape: (usize, usize)) -> Result<()> {
    if m.shape() != shape {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {}x{}",
            m.nrows(),
            m.ncols(),
            shape.0,
            shape.1
        )));
    }
    Ok(())
}

/// Parses and validates a configuration; `preset_override` wins over the
/// file's `preset` key.
pub fn parse_config(text: &str, preset_override: Option<&str>) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse(e.message().to_string()))?;
    let name = preset_override
        .map(str::to_string)
        .or(raw.preset.clone())
        .unwrap_or_else(|| PRESET_REFERENCE.to_string());
    let mut cfg = preset(&name)?;

    if let Some(p) = raw.physics {
        cfg.physics.g = p.g.unwrap_or(cfg.physics.g);
        cfg.physics.r = p.r.unwrap_or(cfg.physics.r);
        cfg.physics.cf = p.cf.unwrap_or(cfg.physics.cf);
    }
    if let Some(s) = raw.setpoint {
        cfg.setpoint.h1 = s.h1.unwrap_or(cfg.setpoint.h1);
        cfg.setpoint.u1 = s.u1.unwrap_or(cfg.setpoint.u1);
        cfg.setpoint.h2 = s.h2.unwrap_or(cfg.setpoint.h2);
        cfg.setpoint.u2 = s.u2.unwrap_or(cfg.setpoint.u2);
    }
    if let Some(b) = raw.boundary {
        if let Some(q) = b.q0 {
            cfg.q0 = matrix("q0", &q)?;
        }
        if let Some(r) = b.r1 {
            cfg.r1 = matrix("r1", &r)?;
        }
    }
    if let Some(s) = raw.system {
        let kind = s.kind.as_deref().unwrap_or(match cfg.system {
            SystemSpec::Bilayer { .. } => "bilayer",
            SystemSpec::Transport { .. } => "transport",
        });
        match kind {
            "bilayer" => {
                let current = match cfg.system {
                    SystemSpec::Bilayer { v_coupling } => v_coupling,
                    _ => VCoupling::Drop,
                };
                cfg.system = SystemSpec::Bilayer {
                    v_coupling: s.v_coupling.unwrap_or(current),
                };
            }
            "transport" => {
                let (mut lr, mut ll, mut sr, mut sl, mut so) = match &cfg.system {
                    SystemSpec::Transport {
                        lambda_r,
                        lambda_l,
                        sr,
                        sl,
                        so,
                    } => (lambda_r.clone(), lambda_l.clone(), sr.clone(), sl.clone(), so.clone()),
                    SystemSpec::Bilayer { .. } => (vec![], vec![], DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)),
                };
                if let Some(v) = s.lambda_r {
                    lr = v;
                }
                if let Some(v) = s.lambda_l {
                    ll = v;
                }
                let (n, m) = (lr.len(), ll.len());
                sr = match s.sr {
                    Some(v) => matrix("sr", &v)?,
                    None if sr.shape() == (n, n) => sr,
                    None => DMatrix::zeros(n, n),
                };
                sl = match s.sl {
                    Some(v) => matrix("sl", &v)?,
                    None if sl.shape() == (n, m) => sl,
                    None => DMatrix::zeros(n, m),
                };
                so = match s.so {
                    Some(v) => matrix("so", &v)?,
                    None if so.shape() == (m, n) => so,
                    None => DMatrix::zeros(m, n),
                };
                cfg.system = SystemSpec::Transport {
                    lambda_r: lr,
                    lambda_l: ll,
                    sr,
                    sl,
                    so,
                };
            }
            other => {
                return Err(Error::Configuration(format!(
                    "system.kind must be \"bilayer\" or \"transport\", got {other:?}"
                )))
            }
        }
    }
    if let Some(k) = raw.kernel {
        cfg.kernel.n = k.n.unwrap_or(cfg.kernel.n);
        cfg.kernel.tol = k.tol.unwrap_or(cfg.kernel.tol);
        cfg.kernel.max_iter = k.max_iter.unwrap_or(cfg.kernel.max_iter);
    }
    if let Some(s) = raw.sim {
        cfg.sim.grid = SimGrid {
            nx: s.nx.unwrap_or(cfg.sim.grid.nx),
        };
        cfg.sim.cfl = s.cfl.unwrap_or(cfg.sim.cfl);
        cfg.sim.t_final = s.t_final.unwrap_or(cfg.sim.t_final);
        cfg.sim.output_every = s.output_every.unwrap_or(cfg.sim.output_every);
        cfg.sim.controller_on = s.controller.unwrap_or(cfg.sim.controller_on);
        let (amp, center, width) = match &cfg.sim.profile {
            InitialProfile::RiemannBump {
                amplitude,
                center,
                width,
            } => (*amplitude, *center, *width),
            _ => (1.0, 0.5, 0.01),
        };
        let bump_keys = s.bump_amplitude.is_some() || s.bump_center.is_some() || s.bump_width.is_some();
        let profile_name = s.profile.clone().or_else(|| bump_keys.then(|| "riemann_bump".to_string()));
        if let Some(name) = profile_name {
            cfg.sim.profile = match name.as_str() {
                "section4_default" => InitialProfile::ReferenceBump,
                "constant_setpoint" => InitialProfile::ConstantSetpoint,
                "custom_csv" => InitialProfile::CustomCsv {
                    path: s.profile_path.clone().ok_or_else(|| {
                        Error::Configuration("profile custom_csv needs sim.profile_path".into())
                    })?,
                },
                "riemann_bump" => InitialProfile::RiemannBump {
                    amplitude: s.bump_amplitude.unwrap_or(amp),
                    center: s.bump_center.unwrap_or(center),
                    width: s.bump_width.unwrap_or(width),
                },
                other => {
                    return Err(Error::Configuration(format!(
                        "unknown initial profile {other:?} (known: section4_default, constant_setpoint, custom_csv, riemann_bump)"
                    )))
                }
            };
        }
    }
    if let Some(o) = raw.output {
        cfg.out_dir = o.dir.or(cfg.out_dir);
        cfg.snapshots = o.snapshots.unwrap_or(cfg.snapshots);
    }
    validate_config(&cfg)?;
    Ok(cfg)
}

pub fn validate_config(cfg: &ExperimentConfig) -> Result<()> {
    cfg.physics.validate()?;
    KernelGrid::new(cfg.kernel.n)?;
    if !(cfg.kernel.tol > 0.0) || cfg.kernel.max_iter == 0 {
        return Err(Error::Validation("kernel.tol must be > 0 and kernel.max_iter >= 1".into()));
    }
    SimGrid::new(cfg.sim.grid.nx)?;
    cfg.sim.validate()?;
    match &cfg.system {
        SystemSpec::Bilayer { .. } => {
            cfg.setpoint.validate(&cfg.physics)?;
            check_shape("q0", &cfg.q0, (2, 2))?;
            check_shape("r1", &cfg.r1, (2, 2))?;
        }
        SystemSpec::Transport {
            lambda_r,
            lambda_l,
            sr,
            sl,
            so,
        } => {
            let (n, m) = (lambda_r.len(), lambda_l.len());
            check_shape("q0", &cfg.q0, (n, m))?;
            check_shape("r1", &cfg.r1, (m, n))?;
            check_shape("sr", sr, (n, n))?;
            check_shape("sl", sl, (n, m))?;
            check_shape("so", so, (m, n))?;
            if matches!(
                cfg.sim.profile,
                InitialProfile::ReferenceBump | InitialProfile::CustomCsv { .. }
            ) {
                return Err(Error::Configuration(
                    "physical initial profiles need system.kind = \"bilayer\"".into(),
                ));
            }
        }
    }
    if cfg.q0.iter().chain(cfg.r1.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("q0/r1 must be finite".into()));
    }
    Ok(())
}

/// Configuration resolved into the characteristic system.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub system: HeteroSystem,
    pub model: Option<LinearModel>,
    pub basis: Option<EigenBasis>,
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        validate_config(&config)?;
        match &config.system {
            SystemSpec::Bilayer { v_coupling } => {
                let model = linearize(&config.setpoint, &config.physics)?;
                let basis = eigenbasis(&model)?;
                let q0 = Matrix2::from_fn(|i, j| config.q0[(i, j)]);
                let r1 = Matrix2::from_fn(|i, j| config.r1[(i, j)]);
                let system = from_bilayer(&model, &basis, &q0, &r1, *v_coupling)?;
                Ok(Self {
                    config,
                    system,
                    model: Some(model),
                    basis: Some(basis),
                })
            }
            SystemSpec::Transport {
                lambda_r,
                lambda_l,
                sr,
                sl,
                so,
            } => {
                let system = HeteroSystem::constant(
                    lambda_r,
                    lambda_l,
                    sr,
                    sl,
                    so,
                    config.q0.clone(),
                    config.r1.clone(),
                );
                system.validate().into_result()?;
                Ok(Self {
                    config,
                    system,
                    model: None,
                    basis: None,
                })
            }
        }
    }

    pub fn bilayer(&self) -> Option<BilayerContext<'_>> {
        self.basis.as_ref().map(|basis| BilayerContext {
            setpoint: &self.config.setpoint,
            basis,
        })
    }

    pub fn kernel_grid(&self) -> Result<KernelGrid> {
        KernelGrid::new(self.config.kernel.n)
    }
}
