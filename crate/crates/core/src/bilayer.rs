//! Two-layer Saint-Venant physics on a flat bottom: flux, Jacobian,
//! interlayer friction, linearization around a set point and the change
//! of variables to characteristic (Riemann) coordinates.
//!
//! State ordering is always `W = (H1, U1, H2, U2)`, layer 1 on top.
//! Deviations from the set point are `U = (h1, u1, h2, u2)`.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly;

pub const DEFAULT_GRAVITY: f64 = 9.81;

/// Relative tolerance below which two eigenvalues count as repeated.
pub const REPEATED_ROOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Gravitational acceleration (m/s²).
    pub g: f64,
    /// Density ratio ρ1/ρ2, `0 <= r < 1`.
    pub r: f64,
    /// Interlayer friction coefficient.
    pub cf: f64,
    pub flat_bathymetry: bool,
}

impl PhysicalParams {
    pub fn new(g: f64, r: f64, cf: f64) -> Result<Self> {
        let p = Self {
            g,
            r,
            cf,
            flat_bathymetry: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(Error::Domain(format!("g must be positive, got {}", self.g)));
        }
        if !(0.0..1.0).contains(&self.r) {
            return Err(Error::Domain(format!(
                "density ratio r must satisfy 0 <= r < 1, got {}",
                self.r
            )));
        }
        if !(self.cf >= 0.0 && self.cf.is_finite()) {
            return Err(Error::Domain(format!("Cf must be >= 0, got {}", self.cf)));
        }
        Ok(())
    }
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            g: DEFAULT_GRAVITY,
            r: 0.01,
            cf: 0.05,
            flat_bathymetry: true,
        }
    }
}

/// Constant operating point `W* = (H1*, U1*, H2*, U2*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetPoint {
    pub h1: f64,
    pub u1: f64,
    pub h2: f64,
    pub u2: f64,
}

impl SetPoint {
    pub fn new(h1: f64, u1: f64, h2: f64, u2: f64) -> Self {
        Self { h1, u1, h2, u2 }
    }

    /// The operating point used in the reference closed-loop experiment.
    pub fn reference() -> Self {
        Self::new(3.0, 1.0, 1.0, 0.95)
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.h1, self.u1, self.h2, self.u2)
    }

    /// Checks positive thicknesses and a subcritical regime in both layers.
    pub fn validate(&self, params: &PhysicalParams) -> Result<()> {
        if !(self.h1 > 0.0 && self.h2 > 0.0) {
            return Err(Error::Domain(format!(
                "set point thicknesses must be positive, got H1*={}, H2*={}",
                self.h1, self.h2
            )));
        }
        let c1 = (params.g * self.h1).sqrt();
        let c2 = (params.g * self.h2).sqrt();
        if self.u1.abs() >= c1 || self.u2.abs() >= c2 {
            return Err(Error::Domain(format!(
                "set point is not subcritical: |U1*|={} vs {c1:.4}, |U2*|={} vs {c2:.4}",
                self.u1.abs(),
                self.u2.abs()
            )));
        }
        Ok(())
    }
}

/// Physical profiles sampled on a 1-D grid over [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalState {
    pub h1: Vec<f64>,
    pub u1: Vec<f64>,
    pub h2: Vec<f64>,
    pub u2: Vec<f64>,
}

impl PhysicalState {
    pub fn len(&self) -> usize {
        self.h1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h1.is_empty()
    }

    pub fn at(&self, j: usize) -> Vector4<f64> {
        Vector4::new(self.h1[j], self.u1[j], self.h2[j], self.u2[j])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.h1.len();
        if self.u1.len() != n || self.h2.len() != n || self.u2.len() != n {
            return Err(Error::Dimension("physical state components differ in length".into()));
        }
        for j in 0..n {
            if !(self.h1[j] > 0.0 && self.h2[j] > 0.0) {
                return Err(Error::Domain(format!(
                    "non-positive thickness at sample {j}: H1={}, H2={}",
                    self.h1[j], self.h2[j]
                )));
            }
        }
        Ok(())
    }
}

fn check_thickness(w: &Vector4<f64>) -> Result<()> {
    if !(w[0] > 0.0 && w[2] > 0.0) {
        return Err(Error::Domain(format!(
            "layer thicknesses must be positive, got H1={}, H2={}",
            w[0], w[2]
        )));
    }
    Ok(())
}

/// Conservative flux `F(W)`.
pub fn flux(w: &Vector4<f64>, params: &PhysicalParams) -> Result<Vector4<f64>> {
    check_thickness(w)?;
    let (h1, u1, h2, u2) = (w[0], w[1], w[2], w[3]);
    let g = params.g;
    Ok(Vector4::new(
        h1 * u1,
        0.5 * u1 * u1 + g * (h1 + h2),
        h2 * u2,
        0.5 * u2 * u2 + g * (h2 + params.r * h1),
    ))
}

/// Jacobian `A(W) = dF/dW` of the quasilinear form.
pub fn jacobian(w: &Vector4<f64>, params: &PhysicalParams) -> Result<Matrix4<f64>> {
    check_thickness(w)?;
    let (h1, u1, h2, u2) = (w[0], w[1], w[2], w[3]);
    let g = params.g;
    #[rustfmt::skip]
    let a = Matrix4::new(
        u1,           h1,  0.0, 0.0,
        g,            u1,  g,   0.0,
        0.0,          0.0, u2,  h2,
        params.r * g, 0.0, g,   u2,
    );
    Ok(a)
}

/// Interlayer friction `(S1f, S2f)`.
pub fn friction_sources(u1: f64, u2: f64, cf: f64, r: f64) -> (f64, f64) {
    let du = u1 - u2;
    let s = cf * du.abs() * du;
    (-s, r * s)
}

/// `dU/dt + A* dU/dx = S U` around a set point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub astar: Matrix4<f64>,
    /// Friction linearization coefficient `2 Cf |U1* - U2*|`.
    pub alpha_sf: f64,
    /// Linear source as a constant matrix acting on `(h1, u1, h2, u2)`.
    pub source: Matrix4<f64>,
    pub setpoint: Option<SetPoint>,
    pub params: Option<PhysicalParams>,
}

impl LinearModel {
    /// A bare transport matrix with no source, for generic eigen work.
    pub fn from_matrix(astar: Matrix4<f64>) -> Self {
        Self {
            astar,
            alpha_sf: 0.0,
            source: Matrix4::zeros(),
            setpoint: None,
            params: None,
        }
    }
}

pub fn linearize(setpoint: &SetPoint, params: &PhysicalParams) -> Result<LinearModel> {
    params.validate()?;
    if !params.flat_bathymetry {
        return Err(Error::Domain(
            "linearization requires a flat bathymetry".into(),
        ));
    }
    setpoint.validate(params)?;
    let astar = jacobian(&setpoint.as_vector(), params)?;
    let alpha = 2.0 * params.cf * (setpoint.u1 - setpoint.u2).abs();
    let mut source = Matrix4::zeros();
    // S(U) = (0, -α(u1-u2), 0, rα(u1-u2))
    source[(1, 1)] = -alpha;
    source[(1, 3)] = alpha;
    source[(3, 1)] = params.r * alpha;
    source[(3, 3)] = -params.r * alpha;
    Ok(LinearModel {
        astar,
        alpha_sf: alpha,
        source,
        setpoint: Some(*setpoint),
        params: Some(*params),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeedMode {
    /// Layer-wise gravity-wave speeds, exact when r = 0.
    ClosedFormR0,
    /// Real roots of the full characteristic quartic.
    NumericQuartic,
}

/// Coefficients (ascending, monic) of
/// `((λ-U1)² - gH1)((λ-U2)² - gH2) - r g² H1 H2`.
pub fn characteristic_quartic(sp: &SetPoint, params: &PhysicalParams) -> [f64; 4] {
    let g = params.g;
    let a1 = -2.0 * sp.u1;
    let a0 = sp.u1 * sp.u1 - g * sp.h1;
    let b1 = -2.0 * sp.u2;
    let b0 = sp.u2 * sp.u2 - g * sp.h2;
    [
        a0 * b0 - params.r * g * g * sp.h1 * sp.h2,
        a1 * b0 + a0 * b1,
        a0 + b0 + a1 * b1,
        a1 + b1,
    ]
}

/// Value of the characteristic relation at `lambda` (zero at a root).
pub fn quartic_residual(sp: &SetPoint, params: &PhysicalParams, lambda: f64) -> f64 {
    let g = params.g;
    ((lambda - sp.u1).powi(2) - g * sp.h1) * ((lambda - sp.u2).powi(2) - g * sp.h2)
        - params.r * g * g * sp.h1 * sp.h2
}

fn check_distinct(sorted: &[f64], scale: f64) -> Result<()> {
    for w in sorted.windows(2) {
        if (w[1] - w[0]).abs() <= REPEATED_ROOT_TOL * scale.max(1.0) {
            return Err(Error::NonHyperbolic(format!(
                "repeated characteristic speed {:.12}",
                w[0]
            )));
        }
    }
    Ok(())
}

/// The four characteristic speeds, sorted ascending.
pub fn characteristic_speeds(
    sp: &SetPoint,
    params: &PhysicalParams,
    mode: SpeedMode,
) -> Result<[f64; 4]> {
    params.validate()?;
    sp.validate(params)?;
    let mut speeds = match mode {
        SpeedMode::ClosedFormR0 => closed_form_r0(sp, params.g),
        SpeedMode::NumericQuartic => {
            let coeffs = characteristic_quartic(sp, params);
            let roots = poly::real_roots_monic(&coeffs, 1e-9)?;
            // Eigenvalues of a double root split by ~sqrt(eps); a vanishing
            // derivative flags them even when the split exceeds the gap test.
            let scale = roots.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
            for &x in &roots {
                if poly::eval_monic(&coeffs, x).1.abs() <= 1e-7 * scale.powi(3) {
                    return Err(Error::NonHyperbolic(format!(
                        "repeated characteristic speed near {x:.9}"
                    )));
                }
            }
            [roots[0], roots[1], roots[2], roots[3]]
        }
    };
    speeds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = speeds.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    check_distinct(&speeds, scale)?;
    Ok(speeds)
}

/// `(U1*-c1, U1*+c1, U2*-c2, U2*+c2)`, in labeling order 1..4.
fn closed_form_r0(sp: &SetPoint, g: f64) -> [f64; 4] {
    let c1 = (g * sp.h1).sqrt();
    let c2 = (g * sp.h2).sqrt();
    [sp.u1 - c1, sp.u1 + c1, sp.u2 - c2, sp.u2 + c2]
}

/// Discrepancy between the numeric eigenvectors and the printed closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormCheck {
    pub right: f64,
    pub left: f64,
}

/// Eigen-decomposition of `A*` arranged in system order: first the
/// rightward speeds ascending, then the leftward speeds by descending
/// magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub lambdas: [f64; 4],
    /// Columns are right eigenvectors.
    pub r: Matrix4<f64>,
    /// Rows are left eigenvectors, scaled so that `L R = I`.
    pub l: Matrix4<f64>,
    pub n_right: usize,
    /// System slot -> rank of that eigenvalue in ascending order.
    pub perm: [usize; 4],
    /// System slot -> label 1..4 of the layer-wise ordering
    /// `(U1-c1, U1+c1, U2-c2, U2+c2)`; present for bilayer models.
    pub labels: Option<[usize; 4]>,
    pub closed_form: Option<ClosedFormCheck>,
}

fn null_vector(m: &Matrix4<f64>) -> Vector4<f64> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    v_t.row(k).transpose()
}

fn normalize_right(v: Vector4<f64>) -> Vector4<f64> {
    if v[0].abs() > 1e-8 * v.norm() {
        v / v[0]
    } else {
        let (k, _) = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap();
        v / v[k]
    }
}

pub fn eigenbasis(model: &LinearModel) -> Result<EigenBasis> {
    let a = &model.astar;
    let a_norm = a.norm().max(f64::MIN_POSITIVE);
    let eig = a.complex_eigenvalues();
    let mut sorted = [0.0; 4];
    for (k, z) in eig.iter().enumerate() {
        if z.im.abs() > 1e-9 * a_norm {
            return Err(Error::NonHyperbolic(format!(
                "complex eigenvalue {:.6} {:+.6}i",
                z.re, z.im
            )));
        }
        sorted[k] = z.re;
    }
    sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
    for w in sorted.windows(2) {
        if w[1] - w[0] <= REPEATED_ROOT_TOL * a_norm.max(1.0) {
            return Err(Error::Degenerate(format!(
                "eigenvalues {:.12} and {:.12} are not distinct",
                w[0], w[1]
            )));
        }
    }
    if sorted.iter().any(|l| l.abs() <= 1e-12 * a_norm) {
        return Err(Error::NonHyperbolic("zero characteristic speed".into()));
    }

    // Positive speeds ascending, then negative speeds ascending in value,
    // i.e. by descending magnitude.
    let mut order: Vec<usize> = (0..4).filter(|&k| sorted[k] > 0.0).collect();
    let n_right = order.len();
    order.extend((0..4).filter(|&k| sorted[k] < 0.0));
    let mut perm = [0usize; 4];
    perm.copy_from_slice(&order);

    let mut lambdas = [0.0; 4];
    let mut r = Matrix4::zeros();
    let mut l = Matrix4::zeros();
    let id = Matrix4::identity();
    for (slot, &k) in perm.iter().enumerate() {
        let lam = sorted[k];
        lambdas[slot] = lam;
        let shifted = a - id * lam;
        let v = normalize_right(null_vector(&shifted));
        let mut w = null_vector(&shifted.transpose());
        let s = w.dot(&v);
        if s.abs() < 1e-14 {
            return Err(Error::Degenerate(format!(
                "left and right eigenvectors orthogonal at λ = {lam}"
            )));
        }
        w /= s;
        r.set_column(slot, &v);
        l.set_row(slot, &w.transpose());
    }

    for slot in 0..4 {
        let v = r.column(slot);
        let res_r = (a * v - v * lambdas[slot]).norm() / v.norm();
        let w = l.row(slot);
        let res_l = (w * a - w * lambdas[slot]).norm() / w.norm();
        if res_r > 1e-10 * a_norm || res_l > 1e-10 * a_norm {
            return Err(Error::Consistency(format!(
                "eigen residual too large at λ = {}: right {res_r:.3e}, left {res_l:.3e}",
                lambdas[slot]
            )));
        }
    }
    let bi = (l * r - id).amax();
    if bi > 1e-10 {
        return Err(Error::Consistency(format!("L R differs from I by {bi:.3e}")));
    }

    let (labels, closed_form) = match (model.setpoint, model.params) {
        (Some(sp), Some(params)) => {
            let labels = match_labels(&lambdas, &closed_form_r0(&sp, params.g));
            let check = closed_form_check(&sp, &params, &lambdas, &labels, a, &r, &l);
            if check.right > 1e-6 || check.left > 1e-6 {
                log::debug!(
                    "closed-form eigenvectors deviate from numeric basis: right {:.3e}, left {:.3e}",
                    check.right,
                    check.left
                );
            }
            (Some(labels), Some(check))
        }
        _ => (None, None),
    };

    Ok(EigenBasis {
        lambdas,
        r,
        l,
        n_right,
        perm,
        labels,
        closed_form,
    })
}

/// Assigns each numeric eigenvalue the label of the nearest layer-wise
/// speed, minimizing the total distance over all permutations.
fn match_labels(lambdas: &[f64; 4], reference: &[f64; 4]) -> [usize; 4] {
    let mut best = [1, 2, 3, 4];
    let mut best_cost = f64::INFINITY;
    let mut idx = [0usize, 1, 2, 3];
    permutations(&mut idx, 0, &mut |p| {
        let cost: f64 = (0..4).map(|s| (lambdas[s] - reference[p[s]]).abs()).sum();
        if cost < best_cost {
            best_cost = cost;
            for s in 0..4 {
                best[s] = p[s] + 1;
            }
        }
    });
    best
}

fn permutations(items: &mut [usize; 4], k: usize, f: &mut dyn FnMut(&[usize; 4])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, f);
        items.swap(k, i);
    }
}

fn direction_gap(a: Vector4<f64>, b: Vector4<f64>) -> f64 {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return f64::INFINITY;
    }
    let (a, b) = (a / na, b / nb);
    (a - b).norm().min((a + b).norm())
}

fn closed_form_check(
    sp: &SetPoint,
    params: &PhysicalParams,
    lambdas: &[f64; 4],
    labels: &[usize; 4],
    a: &Matrix4<f64>,
    r: &Matrix4<f64>,
    l: &Matrix4<f64>,
) -> ClosedFormCheck {
    let g = params.g;
    let (h1, u1, h2, u2) = (sp.h1, sp.u1, sp.h2, sp.u2);
    // eigenvalues indexed by label
    let mut by_label = [0.0; 4];
    for s in 0..4 {
        by_label[labels[s] - 1] = lambdas[s];
    }
    let tr = a.trace();
    let det = a.determinant();
    let mut right: f64 = 0.0;
    let mut left: f64 = 0.0;
    for s in 0..4 {
        let lam = lambdas[s];
        let k = labels[s] - 1;
        let p = (lam - u1).powi(2) - g * h1;
        let v = Vector4::new(1.0, (lam - u1) / h1, p / (g * h1), (lam - u2) * p / (g * h1 * h2));
        right = right.max(direction_gap(v, r.column(s).into_owned()));

        let others: Vec<f64> = (0..4).filter(|&i| i != k).map(|i| by_label[i]).collect();
        let f_k = others[0] * others[1] + others[0] * others[2] + others[1] * others[2];
        let l1 = u1.powi(3) - (tr - lam) * (u1 * u1 + g * h1) + f_k + 3.0 * g * h1 - det / lam;
        let l2 = 3.0 * h1 * u1 * u1 - 2.0 * h1 * u1 * (tr - lam) + h1 * (f_k + g * h1);
        let l3 = g * h1 * (7.0 * u1 - lam);
        let l4 = g * h1 * h2;
        let w = Vector4::new(l1, l2, l3, l4);
        left = left.max(direction_gap(w, l.row(s).transpose()));
    }
    ClosedFormCheck { right, left }
}

impl EigenBasis {
    pub fn n_left(&self) -> usize {
        4 - self.n_right
    }

    /// `ξ = L U`.
    pub fn to_riemann(&self, u: &Vector4<f64>) -> Vector4<f64> {
        self.l * u
    }

    /// `U = R ξ`.
    pub fn from_riemann(&self, xi: &Vector4<f64>) -> Vector4<f64> {
        self.r * xi
    }

    /// Label (1..4) of each system slot, identity when no set point is known.
    pub fn slot_labels(&self) -> [usize; 4] {
        self.labels.unwrap_or([1, 2, 3, 4])
    }
}

/// `M = L S R` in system order, split into its (u, v) blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrices {
    pub m: Matrix4<f64>,
    pub n_right: usize,
    /// u <- u
    pub sr: nalgebra::DMatrix<f64>,
    /// u <- v
    pub sl: nalgebra::DMatrix<f64>,
    /// v <- u
    pub vu: nalgebra::DMatrix<f64>,
    /// v <- v
    pub vv: nalgebra::DMatrix<f64>,
}

impl CouplingMatrices {
    /// Largest entry of the leftward-row block `[vu vv]`.
    pub fn v_block_norm(&self) -> f64 {
        self.vu.amax().max(self.vv.amax())
    }

    /// Fails if the leftward rows are not zero to `tol` (absolute).
    pub fn ensure_v_block_zero(&self, tol: f64) -> Result<()> {
        let norm = self.v_block_norm();
        if norm > tol {
            return Err(Error::Consistency(format!(
                "leftward rows of the coupling matrix are nonzero (max {norm:.3e})"
            )));
        }
        Ok(())
    }
}

pub fn coupling_matrices(model: &LinearModel, basis: &EigenBasis) -> CouplingMatrices {
    let m = basis.l * model.source * basis.r;
    let n = basis.n_right;
    let k = 4 - n;
    let block = |r0: usize, nr: usize, c0: usize, nc: usize| {
        nalgebra::DMatrix::from_fn(nr, nc, |i, j| m[(r0 + i, c0 + j)])
    };
    CouplingMatrices {
        m,
        n_right: n,
        sr: block(0, n, 0, n),
        sl: block(0, n, n, k),
        vu: block(n, k, 0, n),
        vv: block(n, k, n, k),
    }
}
