//! General `n + m` heterodirectional linear hyperbolic system
//!
//! ```text
//! u_t + Λr(x) u_x = Sr(x) u + Sl(x) v
//! v_t - Λl(x) v_x = So(x) u
//! u(t,0) = Q0 v(t,0),   v(t,1) = R1 u(t,1) + U(t)
//! ```
//!
//! Rightward speeds are stored in ascending order, leftward speeds in
//! descending order of magnitude (`λl_1 > ... > λl_m > 0`); with that
//! ordering every kernel component receives exactly one boundary datum.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::bilayer::{coupling_matrices, EigenBasis, LinearModel};
use crate::error::{Error, Result};
use crate::field::{CoefficientField, FieldMatrix};

pub const DEFAULT_VALIDATION_SAMPLES: usize = 1001;
pub const SPEED_ORDER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroSystem {
    pub n: usize,
    pub m: usize,
    pub lambda_r: Vec<CoefficientField>,
    pub lambda_l: Vec<CoefficientField>,
    pub sr: FieldMatrix,
    pub sl: FieldMatrix,
    pub so: FieldMatrix,
    pub q0: DMatrix<f64>,
    pub r1: DMatrix<f64>,
    /// Display label (1-based) for each component in system order
    /// `(u_1..u_n, v_1..v_m)`.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub passed: bool,
    /// First violated constraint.
    pub failure: Option<String>,
    /// Smallest and largest speed over the sample grid (valid when passed).
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl ValidationReport {
    fn fail(msg: String) -> Self {
        Self {
            passed: false,
            failure: Some(msg),
            lambda_min: f64::NAN,
            lambda_max: f64::NAN,
        }
    }

    pub fn into_result(self) -> Result<Self> {
        match &self.failure {
            Some(msg) => Err(Error::Validation(msg.clone())),
            None => Ok(self),
        }
    }
}

/// Treatment of the leftward rows of the bilayer coupling matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VCoupling {
    /// Leftward equations are pure transport (`So = 0`).
    #[default]
    Drop,
    /// Keeps the `v <- u` block as `So`; the `v <- v` block is dropped.
    KeepVu,
}

impl HeteroSystem {
    /// Constant-coefficient system.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        lambda_r: &[f64],
        lambda_l: &[f64],
        sr: &DMatrix<f64>,
        sl: &DMatrix<f64>,
        so: &DMatrix<f64>,
        q0: DMatrix<f64>,
        r1: DMatrix<f64>,
    ) -> Self {
        let n = lambda_r.len();
        let m = lambda_l.len();
        Self {
            n,
            m,
            lambda_r: lambda_r.iter().map(|&c| c.into()).collect(),
            lambda_l: lambda_l.iter().map(|&c| c.into()).collect(),
            sr: FieldMatrix::from_constant(sr),
            sl: FieldMatrix::from_constant(sl),
            so: FieldMatrix::from_constant(so),
            q0,
            r1,
            labels: (1..=n + m).collect(),
        }
    }

    /// Pure transport: no in-domain coupling.
    pub fn transport(lambda_r: &[f64], lambda_l: &[f64], q0: DMatrix<f64>, r1: DMatrix<f64>) -> Self {
        let (n, m) = (lambda_r.len(), lambda_l.len());
        Self::constant(
            lambda_r,
            lambda_l,
            &DMatrix::zeros(n, n),
            &DMatrix::zeros(n, m),
            &DMatrix::zeros(m, n),
            q0,
            r1,
        )
    }

    pub fn lr(&self, i: usize, x: f64) -> f64 {
        self.lambda_r[i].eval(x)
    }

    pub fn ll(&self, i: usize, x: f64) -> f64 {
        self.lambda_l[i].eval(x)
    }

    pub fn speeds_constant(&self) -> bool {
        self.lambda_r.iter().chain(&self.lambda_l).all(|f| f.is_constant())
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with(DEFAULT_VALIDATION_SAMPLES)
    }

    pub fn validate_with(&self, samples: usize) -> ValidationReport {
        let (n, m) = (self.n, self.m);
        if n == 0 || m == 0 {
            return ValidationReport::fail(format!("need n >= 1 and m >= 1, got n={n}, m={m}"));
        }
        let checks = [
            ("Lambda_r", (self.lambda_r.len(), 1), (n, 1)),
            ("Lambda_l", (self.lambda_l.len(), 1), (m, 1)),
            ("Sr", self.sr.shape(), (n, n)),
            ("Sl", self.sl.shape(), (n, m)),
            ("So", self.so.shape(), (m, n)),
            ("Q0", self.q0.shape(), (n, m)),
            ("R1", self.r1.shape(), (m, n)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return ValidationReport::fail(format!(
                    "{name} has shape {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                ));
            }
        }
        if self.labels.len() != n + m {
            return ValidationReport::fail(format!(
                "{} labels for {} components",
                self.labels.len(),
                n + m
            ));
        }
        if self.q0.iter().chain(self.r1.iter()).any(|v| !v.is_finite()) {
            return ValidationReport::fail("Q0/R1 contain non-finite entries".into());
        }

        let samples = samples.max(2);
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for k in 0..samples {
            let x = k as f64 / (samples - 1) as f64;
            let r: Vec<f64> = (0..n).map(|i| self.lr(i, x)).collect();
            let l: Vec<f64> = (0..m).map(|i| self.ll(i, x)).collect();
            for (name, v) in [("lambda_r", &r), ("lambda_l", &l)] {
                if let Some(i) = v.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
                    return ValidationReport::fail(format!(
                        "{name}_{} = {} is not a positive finite speed at x = {x}",
                        i + 1,
                        v[i]
                    ));
                }
            }
            for i in 1..n {
                if r[i] - r[i - 1] <= SPEED_ORDER_TOL {
                    return ValidationReport::fail(format!(
                        "rightward speeds not strictly increasing at x = {x}: lambda_r_{} = {}, lambda_r_{} = {}",
                        i,
                        r[i - 1],
                        i + 1,
                        r[i]
                    ));
                }
            }
            for i in 1..m {
                if l[i - 1] - l[i] <= SPEED_ORDER_TOL {
                    return ValidationReport::fail(format!(
                        "leftward speeds not strictly decreasing at x = {x}: lambda_l_{} = {}, lambda_l_{} = {}",
                        i,
                        l[i - 1],
                        i + 1,
                        l[i]
                    ));
                }
            }
            for (name, fm) in [("Sr", &self.sr), ("Sl", &self.sl), ("So", &self.so)] {
                if fm.eval(x).iter().any(|v| !v.is_finite()) {
                    return ValidationReport::fail(format!("{name} is unbounded at x = {x}"));
                }
            }
            for s in r.iter().chain(&l) {
                lo = lo.min(*s);
                hi = hi.max(*s);
            }
        }
        ValidationReport {
            passed: true,
            failure: None,
            lambda_min: lo,
            lambda_max: hi,
        }
    }

    /// `(λ̲, λ̄)` over the validation grid.
    pub fn speed_bounds(&self) -> Result<(f64, f64)> {
        let rep = self.validate().into_result()?;
        Ok((rep.lambda_min, rep.lambda_max))
    }

    /// Smallest rightward and smallest leftward speed over the grid.
    pub fn slowest_speeds(&self, samples: usize) -> (f64, f64) {
        let samples = samples.max(2);
        let mut r = f64::INFINITY;
        let mut l = f64::INFINITY;
        for k in 0..samples {
            let x = k as f64 / (samples - 1) as f64;
            for i in 0..self.n {
                r = r.min(self.lr(i, x));
            }
            for i in 0..self.m {
                l = l.min(self.ll(i, x));
            }
        }
        (r, l)
    }
}

/// Positions of the rightward and leftward labels in the layer-wise
/// ordering used for `Q0`/`R1` input: each block lists its labels in
/// ascending order.
fn label_positions(labels: &[usize], n: usize) -> (Vec<usize>, Vec<usize>) {
    let rank_in = |block: &[usize]| -> Vec<usize> {
        let mut sorted = block.to_vec();
        sorted.sort_unstable();
        block
            .iter()
            .map(|l| sorted.iter().position(|s| s == l).unwrap())
            .collect()
    };
    (rank_in(&labels[..n]), rank_in(&labels[n..]))
}

/// Builds the characteristic system from a bilayer linearization.
///
/// `q0` maps `(ξ1, ξ3)` to `(ξ2, ξ4)` and `r1` maps `(ξ2, ξ4)` to
/// `(ξ1, ξ3)` in layer-wise labels; they are permuted into system order.
pub fn from_bilayer(
    model: &LinearModel,
    basis: &EigenBasis,
    q0: &Matrix2<f64>,
    r1: &Matrix2<f64>,
    v_coupling: VCoupling,
) -> Result<HeteroSystem> {
    let n = basis.n_right;
    if n != 2 {
        return Err(Error::Dimension(format!(
            "bilayer system needs two rightward and two leftward speeds, got {n} rightward"
        )));
    }
    let m = 4 - n;
    let labels = basis.slot_labels().to_vec();
    let (pu, pv) = label_positions(&labels, n);
    let q0_sys = DMatrix::from_fn(n, m, |i, j| q0[(pu[i], pv[j])]);
    let r1_sys = DMatrix::from_fn(m, n, |i, j| r1[(pv[i], pu[j])]);

    let c = coupling_matrices(model, basis);
    let so = match v_coupling {
        VCoupling::Drop => DMatrix::zeros(m, n),
        VCoupling::KeepVu => c.vu.clone(),
    };
    if v_coupling == VCoupling::Drop && c.v_block_norm() > 0.0 {
        log::debug!(
            "leftward coupling rows dropped (max entry {:.3e})",
            c.v_block_norm()
        );
    }
    let sys = HeteroSystem {
        n,
        m,
        lambda_r: basis.lambdas[..n].iter().map(|&l| l.into()).collect(),
        lambda_l: basis.lambdas[n..].iter().map(|&l| (-l).into()).collect(),
        sr: FieldMatrix::from_constant(&c.sr),
        sl: FieldMatrix::from_constant(&c.sl),
        so: FieldMatrix::from_constant(&so),
        q0: q0_sys,
        r1: r1_sys,
        labels,
    };
    sys.validate().into_result()?;
    Ok(sys)
}
