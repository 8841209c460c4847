//! Backstepping kernels on the triangle `T = {0 <= ξ <= x <= 1}`.
//!
//! With `K = G21` (m×n) and `L = G22` (m×m) the componentwise equations are
//!
//! ```text
//! λr_j(ξ) ∂ξ K_ij - λl_i(x) ∂x K_ij = -K_ij λr_j'(ξ) - (K Sr)_ij - (L So)_ij
//! λl_i(x) ∂x L_ij + λl_j(ξ) ∂ξ L_ij = -L_ij λl_j'(ξ) + (K Sl)_ij
//! K_ij(x,x) = -So_ij(x) / (λl_i(x) + λr_j(x))
//! L_ij(x,x) = 0 for i != j
//! [L(x,0) Λl(0) - K(x,0) Λr(0) Q0]_ij = 0 for i <= j
//! ```
//!
//! Each scalar component is written as an integral along its
//! characteristic up to the edge carrying its datum, and the coupled
//! system is solved by Picard iteration.

mod residual;
mod volterra;

pub use residual::{kernel_residuals, ResidualReport};
pub use volterra::solve_c;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hetero::HeteroSystem;

pub const MIN_GRID: usize = 8;
pub const DEFAULT_GRID: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200;

/// Uniform lattice `(x_a, ξ_b) = (a h, b h)`, `0 <= b <= a <= N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelGrid {
    pub n: usize,
}

impl KernelGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < MIN_GRID {
            return Err(Error::Validation(format!(
                "kernel grid needs N >= {MIN_GRID}, got {n}"
            )));
        }
        Ok(Self { n })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn x(&self, a: usize) -> f64 {
        a as f64 / self.n as f64
    }

    pub fn node_count(&self) -> usize {
        (self.n + 1) * (self.n + 2) / 2
    }

    pub fn idx(a: usize, b: usize) -> usize {
        debug_assert!(b <= a);
        a * (a + 1) / 2 + b
    }
}

/// Scalar function sampled on the triangular lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct TriField {
    n: usize,
    values: Vec<f64>,
}

impl TriField {
    pub fn zeros(grid: KernelGrid) -> Self {
        Self {
            n: grid.n,
            values: vec![0.0; grid.node_count()],
        }
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[KernelGrid::idx(a, b)]
    }

    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        self.values[KernelGrid::idx(a, b)] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Bilinear interpolation in square cells, linear on the triangular
    /// cells along the diagonal. Arguments are clamped into `T`.
    pub fn eval(&self, x: f64, xi: f64) -> f64 {
        let n = self.n;
        let nf = n as f64;
        let x = x.clamp(0.0, 1.0);
        let xi = xi.clamp(0.0, x);
        let px = x * nf;
        let pxi = xi * nf;
        let a0 = (px.floor() as usize).min(n - 1);
        let b0 = (pxi.floor() as usize).min(a0);
        let s = px - a0 as f64;
        let t = pxi - b0 as f64;
        if b0 < a0 {
            let f00 = self.get(a0, b0);
            let f10 = self.get(a0 + 1, b0);
            let f01 = self.get(a0, b0 + 1);
            let f11 = self.get(a0 + 1, b0 + 1);
            (1.0 - s) * ((1.0 - t) * f00 + t * f01) + s * ((1.0 - t) * f10 + t * f11)
        } else {
            // corners (a0,a0), (a0+1,a0), (a0+1,a0+1); t <= s
            let f00 = self.get(a0, a0);
            let f10 = self.get(a0 + 1, a0);
            let f11 = self.get(a0 + 1, a0 + 1);
            f00 + s * (f10 - f00) + t.min(s) * (f11 - f10)
        }
    }
}

/// Solved kernels and derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub grid: KernelGrid,
    pub n: usize,
    pub m: usize,
    /// `G21`, row-major `m × n`.
    pub k: Vec<TriField>,
    /// `G22`, row-major `m × m`.
    pub l: Vec<TriField>,
    /// `Δ(x_a)` at every lattice abscissa; strictly lower triangular.
    pub delta: Vec<DMatrix<f64>>,
    /// `C^r`, row-major `n × n`; zero until [`KernelSet::with_c`].
    pub cr: Vec<TriField>,
    /// `C^l`, row-major `n × m`.
    pub cl: Vec<TriField>,
    pub iterations: usize,
    pub last_change: f64,
    /// Sup-norm change of every Picard sweep.
    pub change_history: Vec<f64>,
    pub c_iterations: usize,
}

impl KernelSet {
    pub fn zeros(grid: KernelGrid, n: usize, m: usize) -> Self {
        Self {
            grid,
            n,
            m,
            k: vec![TriField::zeros(grid); m * n],
            l: vec![TriField::zeros(grid); m * m],
            delta: vec![DMatrix::zeros(m, m); grid.n + 1],
            cr: vec![TriField::zeros(grid); n * n],
            cl: vec![TriField::zeros(grid); n * m],
            iterations: 0,
            last_change: 0.0,
            change_history: Vec::new(),
            c_iterations: 0,
        }
    }

    pub fn g21(&self, i: usize, j: usize) -> &TriField {
        &self.k[i * self.n + j]
    }

    pub fn g22(&self, i: usize, j: usize) -> &TriField {
        &self.l[i * self.m + j]
    }

    pub fn g21_at(&self, x: f64, xi: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.n, |i, j| self.g21(i, j).eval(x, xi))
    }

    pub fn g22_at(&self, x: f64, xi: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.m, |i, j| self.g22(i, j).eval(x, xi))
    }

    pub fn cr_at(&self, x: f64, xi: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.cr[i * self.n + j].eval(x, xi))
    }

    pub fn cl_at(&self, x: f64, xi: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.m, |i, j| self.cl[i * self.m + j].eval(x, xi))
    }

    /// Full transformation kernel `[[0, 0], [G21, G22]]`.
    pub fn transform_at(&self, x: f64, xi: f64) -> DMatrix<f64> {
        let (n, m) = (self.n, self.m);
        let mut g = DMatrix::zeros(n + m, n + m);
        g.view_mut((n, 0), (m, n)).copy_from(&self.g21_at(x, xi));
        g.view_mut((n, n), (m, m)).copy_from(&self.g22_at(x, xi));
        g
    }

    /// `Δ(x)`, linearly interpolated between lattice abscissae.
    pub fn delta_at(&self, x: f64) -> DMatrix<f64> {
        let n = self.grid.n;
        let p = x.clamp(0.0, 1.0) * n as f64;
        let a = (p.floor() as usize).min(n - 1);
        let t = p - a as f64;
        &self.delta[a] * (1.0 - t) + &self.delta[a + 1] * t
    }

    pub fn is_finite(&self) -> bool {
        self.k
            .iter()
            .chain(&self.l)
            .chain(&self.cr)
            .chain(&self.cl)
            .all(TriField::is_finite)
    }

    /// Attaches `C^r`, `C^l` solved from the current kernels.
    pub fn with_c(mut self, system: &HeteroSystem, tol: f64, max_iter: usize) -> Result<Self> {
        let (cr, cl, iters) = solve_c(&self, system, tol, max_iter)?;
        self.cr = cr;
        self.cl = cl;
        self.c_iterations = iters;
        Ok(self)
    }

    /// Adds `amount` to one `G21` lattice value (fault injection for
    /// verification runs).
    pub fn perturb_g21(&mut self, i: usize, j: usize, a: usize, b: usize, amount: f64) {
        let n = self.n;
        let f = &mut self.k[i * n + j];
        let v = f.get(a, b);
        f.set(a, b, v + amount);
    }
}

/// Edge of `T` where a characteristic ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Diagonal,
    XiZero,
    XOne,
}

/// Point on a characteristic with its arclength parameter magnitude.
#[derive(Debug, Clone, Copy)]
struct PathPoint {
    x: f64,
    xi: f64,
    s: f64,
}

struct Trace {
    points: Vec<PathPoint>,
    exit: Exit,
}

/// Integrates `d(x,ξ)/ds = vel(x,ξ)` with RK2 until one of the enabled
/// edges is crossed; the last step is shortened to land on the edge.
fn trace(
    x0: f64,
    xi0: f64,
    vel: &dyn Fn(f64, f64) -> (f64, f64),
    exits: &[Exit],
    h: f64,
) -> Result<Trace> {
    let edge = |e: Exit, x: f64, xi: f64| match e {
        Exit::Diagonal => x - xi,
        Exit::XiZero => xi,
        Exit::XOne => 1.0 - x,
    };
    let rk2 = |x: f64, xi: f64, ds: f64| {
        let (vx, vxi) = vel(x, xi);
        let (wx, wxi) = vel(x + 0.5 * ds * vx, xi + 0.5 * ds * vxi);
        (x + ds * wx, xi + ds * wxi)
    };
    let (vx, vxi) = vel(x0, xi0);
    let speed = vx.abs().max(vxi.abs());
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::Configuration(format!(
            "characteristic through ({x0:.4}, {xi0:.4}) is stationary"
        )));
    }
    let ds = h / speed;
    let mut points = vec![PathPoint { x: x0, xi: xi0, s: 0.0 }];
    let (mut x, mut xi, mut s) = (x0, xi0, 0.0);
    let max_steps = 16 * (1.0 / h) as usize + 64;
    for _ in 0..max_steps {
        let (nx, nxi) = rk2(x, xi, ds);
        let crossed = exits
            .iter()
            .map(|&e| (e, edge(e, x, xi), edge(e, nx, nxi)))
            .filter(|(_, _, after)| *after <= 0.0)
            .min_by(|p, q| {
                let fp = p.1 / (p.1 - p.2);
                let fq = q.1 / (q.1 - q.2);
                fp.partial_cmp(&fq).unwrap()
            });
        match crossed {
            None => {
                x = nx;
                xi = nxi;
                s += ds;
                points.push(PathPoint { x, xi, s });
            }
            Some((e, before, after)) => {
                let theta = if before - after > 0.0 {
                    (before / (before - after)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                let (mut ex, mut exi) = rk2(x, xi, ds * theta);
                match e {
                    Exit::Diagonal => {
                        let mid = 0.5 * (ex + exi);
                        ex = mid;
                        exi = mid;
                    }
                    Exit::XiZero => exi = 0.0,
                    Exit::XOne => ex = 1.0,
                }
                s += ds * theta;
                points.push(PathPoint {
                    x: ex.clamp(0.0, 1.0),
                    xi: exi.clamp(0.0, 1.0),
                    s,
                });
                return Ok(Trace { points, exit: e });
            }
        }
    }
    Err(Error::Configuration(format!(
        "characteristic through ({x0:.4}, {xi0:.4}) does not leave the triangle"
    )))
}

/// Trapezoid rule of `f` along the path points.
fn path_integral(points: &[PathPoint], f: &dyn Fn(f64, f64) -> f64) -> f64 {
    let mut acc = 0.0;
    let mut prev = f(points[0].x, points[0].xi);
    for w in points.windows(2) {
        let cur = f(w[1].x, w[1].xi);
        acc += 0.5 * (prev + cur) * (w[1].s - w[0].s);
        prev = cur;
    }
    acc
}

struct Iterate<'a> {
    sys: &'a HeteroSystem,
    k: &'a [TriField],
    l: &'a [TriField],
}

impl Iterate<'_> {
    fn k(&self, i: usize, j: usize, x: f64, xi: f64) -> f64 {
        self.k[i * self.sys.n + j].eval(x, xi)
    }

    fn l(&self, i: usize, j: usize, x: f64, xi: f64) -> f64 {
        self.l[i * self.sys.m + j].eval(x, xi)
    }

    fn rhs_k(&self, i: usize, j: usize, x: f64, xi: f64) -> f64 {
        let s = self.sys;
        let mut r = -self.k(i, j, x, xi) * s.lambda_r[j].derivative(xi);
        for p in 0..s.n {
            let c = s.sr.entry(p, j, xi);
            if c != 0.0 {
                r -= self.k(i, p, x, xi) * c;
            }
        }
        for p in 0..s.m {
            let c = s.so.entry(p, j, xi);
            if c != 0.0 {
                r -= self.l(i, p, x, xi) * c;
            }
        }
        r
    }

    fn rhs_l(&self, i: usize, j: usize, x: f64, xi: f64) -> f64 {
        let s = self.sys;
        let mut r = -self.l(i, j, x, xi) * s.lambda_l[j].derivative(xi);
        for p in 0..s.n {
            let c = s.sl.entry(p, j, xi);
            if c != 0.0 {
                r += self.k(i, p, x, xi) * c;
            }
        }
        r
    }

    /// Datum of `L_ij` on `ξ = 0` for `i <= j`.
    fn l_boundary(&self, i: usize, j: usize, x: f64) -> f64 {
        let s = self.sys;
        let mut acc = 0.0;
        for p in 0..s.n {
            let kp = self.k(i, p, x, 0.0);
            if kp != 0.0 {
                acc += kp * s.lr(p, 0.0) * s.q0[(p, j)];
            }
        }
        acc / s.ll(j, 0.0)
    }
}

fn k_component(it: &Iterate, i: usize, j: usize, x: f64, xi: f64, h: f64) -> Result<f64> {
    let s = it.sys;
    let datum = |y: f64| -s.so.entry(i, j, y) / (s.ll(i, y) + s.lr(j, y));
    if x - xi <= 0.0 {
        return Ok(datum(x));
    }
    let vel = |px: f64, pxi: f64| (-s.ll(i, px), s.lr(j, pxi));
    let tr = trace(x, xi, &vel, &[Exit::Diagonal], h)?;
    let end = tr.points.last().unwrap();
    let integral = path_integral(&tr.points, &|px, pxi| it.rhs_k(i, j, px, pxi));
    Ok(datum(end.x) - integral)
}

fn l_component(it: &Iterate, i: usize, j: usize, a: usize, b: usize, h: f64) -> Result<f64> {
    let s = it.sys;
    let (x, xi) = (a as f64 * h, b as f64 * h);
    let on_diag = a == b;

    if i > j {
        // Free datum on ξ = 0: chosen so that the characteristic meets the
        // diagonal with value zero when it reaches it inside T.
        if on_diag {
            return Ok(0.0);
        }
        let fwd = |px: f64, pxi: f64| (s.ll(i, px), s.ll(j, pxi));
        let tr = trace(x, xi, &fwd, &[Exit::Diagonal, Exit::XOne], h)?;
        if tr.exit == Exit::Diagonal {
            let integral = path_integral(&tr.points, &|px, pxi| it.rhs_l(i, j, px, pxi));
            return Ok(-integral);
        }
        if b == 0 {
            return Ok(0.0);
        }
        let bwd = |px: f64, pxi: f64| (-s.ll(i, px), -s.ll(j, pxi));
        let tr = trace(x, xi, &bwd, &[Exit::XiZero], h)?;
        let integral = path_integral(&tr.points, &|px, pxi| it.rhs_l(i, j, px, pxi));
        return Ok(integral);
    }

    if i < j && on_diag && a > 0 {
        return Ok(0.0);
    }
    if b == 0 {
        return Ok(it.l_boundary(i, j, x));
    }
    let bwd = |px: f64, pxi: f64| (-s.ll(i, px), -s.ll(j, pxi));
    let exits: &[Exit] = if i == j {
        &[Exit::XiZero]
    } else {
        &[Exit::XiZero, Exit::Diagonal]
    };
    let tr = trace(x, xi, &bwd, exits, h)?;
    let end = tr.points.last().unwrap();
    let datum = match tr.exit {
        Exit::XiZero => it.l_boundary(i, j, end.x),
        _ => 0.0,
    };
    let integral = path_integral(&tr.points, &|px, pxi| it.rhs_l(i, j, px, pxi));
    Ok(datum + integral)
}

/// Solves for `G21`, `G22` and extracts `Δ`. `C^r`, `C^l` are left zero;
/// see [`KernelSet::with_c`].
pub fn solve_kernels(
    system: &HeteroSystem,
    grid: KernelGrid,
    tol: f64,
    max_iter: usize,
) -> Result<KernelSet> {
    system.validate().into_result()?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::Validation(format!(
            "kernel solve needs tol > 0 and max_iter >= 1, got {tol}, {max_iter}"
        )));
    }
    let (n, m) = (system.n, system.m);
    let h = grid.h();
    let mut set = KernelSet::zeros(grid, n, m);
    let mut k = set.k.clone();
    let mut l = set.l.clone();

    for iter in 1..=max_iter {
        let it = Iterate {
            sys: system,
            k: &set.k,
            l: &set.l,
        };
        let mut change: f64 = 0.0;
        for a in 0..=grid.n {
            for b in 0..=a {
                let (x, xi) = (grid.x(a), grid.x(b));
                for i in 0..m {
                    for j in 0..n {
                        let v = k_component(&it, i, j, x, xi, h)?;
                        change = change.max((v - set.k[i * n + j].get(a, b)).abs());
                        k[i * n + j].set(a, b, v);
                    }
                    for j in 0..m {
                        let v = l_component(&it, i, j, a, b, h)?;
                        change = change.max((v - set.l[i * m + j].get(a, b)).abs());
                        l[i * m + j].set(a, b, v);
                    }
                }
            }
        }
        std::mem::swap(&mut set.k, &mut k);
        std::mem::swap(&mut set.l, &mut l);
        set.change_history.push(change);
        set.iterations = iter;
        set.last_change = change;
        if !change.is_finite() {
            return Err(Error::Iteration {
                iterations: iter,
                last_change: change,
            });
        }
        if change < tol {
            log::debug!("kernels converged after {iter} sweeps (change {change:.3e})");
            set.delta = extract_delta(&set, system);
            return Ok(set);
        }
    }
    Err(Error::Iteration {
        iterations: max_iter,
        last_change: set.last_change,
    })
}

/// `Δ(x)_ij = [G22(x,0) Λl(0) - G21(x,0) Λr(0) Q0]_ij` for `i > j`,
/// exactly zero otherwise.
fn extract_delta(set: &KernelSet, system: &HeteroSystem) -> Vec<DMatrix<f64>> {
    let (n, m) = (system.n, system.m);
    (0..=set.grid.n)
        .map(|a| {
            let mut d = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..i {
                    let mut v = set.g22(i, j).get(a, 0) * system.ll(j, 0.0);
                    for p in 0..n {
                        v -= set.g21(i, p).get(a, 0) * system.lr(p, 0.0) * system.q0[(p, j)];
                    }
                    d[(i, j)] = v;
                }
            }
            d
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(lr: f64, ll: f64, sr: f64, sl: f64, so: f64, q0: f64) -> HeteroSystem {
        HeteroSystem::constant(
            &[lr],
            &[ll],
            &DMatrix::from_element(1, 1, sr),
            &DMatrix::from_element(1, 1, sl),
            &DMatrix::from_element(1, 1, so),
            DMatrix::from_element(1, 1, q0),
            DMatrix::from_element(1, 1, 0.5),
        )
    }

    #[test]
    fn grid_minimum() {
        assert!(KernelGrid::new(7).is_err());
        assert_eq!(KernelGrid::new(8).unwrap().node_count(), 45);
    }

    #[test]
    fn trifield_interpolates_linear_functions_exactly() {
        let g = KernelGrid::new(10).unwrap();
        let mut f = TriField::zeros(g);
        for a in 0..=10 {
            for b in 0..=a {
                f.set(a, b, 2.0 * g.x(a) - 3.0 * g.x(b) + 1.0);
            }
        }
        for &(x, xi) in &[(0.55, 0.21), (0.37, 0.33), (1.0, 1.0), (0.0, 0.0), (0.93, 0.05)] {
            assert_relative_eq!(f.eval(x, xi), 2.0 * x - 3.0 * xi + 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_coupling_gives_zero_kernels() {
        let sys = HeteroSystem::transport(
            &[1.0, 2.0],
            &[2.0, 1.0],
            DMatrix::from_element(2, 2, 0.3),
            DMatrix::from_element(2, 2, 0.7),
        );
        let ks = solve_kernels(&sys, KernelGrid::new(16).unwrap(), 1e-8, 200).unwrap();
        assert_eq!(ks.iterations, 1);
        assert!(ks.k.iter().chain(&ks.l).all(TriField::is_zero));
        assert!(ks.delta.iter().all(|d| d.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn scalar_diagonal_datum() {
        let sys = scalar(1.0, 1.0, 0.0, 0.0, 2.0, 0.0);
        let g = KernelGrid::new(20).unwrap();
        let ks = solve_kernels(&sys, g, 1e-10, 200).unwrap();
        for a in 0..=20 {
            assert_eq!(ks.g21(0, 0).get(a, a), -1.0);
        }
    }

    #[test]
    fn scalar_closed_form() {
        // Sr = a, Sl = So = 0: K = -So/2 e^{...} reduces to K ≡ 0 except the
        // datum; with So = s0 constant and Sr = a, along the characteristic
        // dK/ds = -a K, so K(x,ξ) = -s0/2 · exp(a (x-ξ)/2) for unit speeds.
        let (a_coef, s0) = (0.8, 1.0);
        let sys = scalar(1.0, 1.0, a_coef, 0.0, s0, 0.0);
        let g = KernelGrid::new(40).unwrap();
        let ks = solve_kernels(&sys, g, 1e-12, 200).unwrap();
        for &(x, xi) in &[(1.0, 0.0), (0.7, 0.2), (0.5, 0.5)] {
            let exact = -0.5 * s0 * (a_coef * (x - xi) / 2.0).exp();
            assert_relative_eq!(ks.g21(0, 0).eval(x, xi), exact, epsilon = 1e-3);
        }
    }

    #[test]
    fn coupled_scalar_converges_and_delta_is_lower() {
        let sys = scalar(1.5, 1.0, 0.2, 0.5, 1.0, 0.7);
        let ks = solve_kernels(&sys, KernelGrid::new(32).unwrap(), 1e-10, 200).unwrap();
        assert!(ks.iterations > 1);
        assert!(ks.is_finite());
        assert!(ks.delta.iter().all(|d| d[(0, 0)] == 0.0));
        // ξ = 0 condition for the only (diagonal) G22 component.
        for a in 0..=32 {
            let lhs = ks.g22(0, 0).get(a, 0) * 1.0;
            let rhs = ks.g21(0, 0).get(a, 0) * 1.5 * 0.7;
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn two_by_two_coupled_solve() {
        let sys = HeteroSystem::constant(
            &[1.0, 1.6],
            &[1.4, 0.9],
            &DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.1, 0.0]),
            &DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.1, -0.2]),
            &DMatrix::from_row_slice(2, 2, &[0.5, -0.4, 0.2, 0.3]),
            DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.3, 0.4]),
            DMatrix::from_row_slice(2, 2, &[0.2, 0.1, 0.0, 0.3]),
        );
        let g = KernelGrid::new(24).unwrap();
        let ks = solve_kernels(&sys, g, 1e-9, 200).unwrap();
        assert!(ks.is_finite());
        for d in &ks.delta {
            assert_eq!(d[(0, 0)], 0.0);
            assert_eq!(d[(0, 1)], 0.0);
            assert_eq!(d[(1, 1)], 0.0);
        }
        // off-diagonal G22 vanishes on the diagonal (away from the corner)
        for a in 1..=24 {
            assert_eq!(ks.g22(0, 1).get(a, a), 0.0);
            assert_eq!(ks.g22(1, 0).get(a, a), 0.0);
        }
        // Picard sweeps contract
        let h = &ks.change_history;
        for w in h.windows(2).filter(|w| w[0] > 1e-12) {
            assert!(w[1] <= w[0], "{h:?}");
        }
    }

    #[test]
    fn transform_matrix_layout() {
        let sys = scalar(1.0, 1.0, 0.0, 0.0, 2.0, 0.0);
        let ks = solve_kernels(&sys, KernelGrid::new(8).unwrap(), 1e-10, 50).unwrap();
        let t = ks.transform_at(0.5, 0.5);
        assert_eq!(t[(0, 0)], 0.0);
        assert_eq!(t[(0, 1)], 0.0);
        assert_eq!(t[(1, 0)], -1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn homogeneous_kernels_vanish(sr in -1.0..1.0f64, q0 in -1.0..1.0f64, r1 in -1.0..1.0f64) {
            // So = Sl = 0 with arbitrary Sr: all kernels are zero.
            let mut sys = scalar(1.0, 1.3, sr, 0.0, 0.0, q0);
            sys.r1[(0, 0)] = r1;
            let ks = solve_kernels(&sys, KernelGrid::new(10).unwrap(), 1e-10, 50).unwrap();
            prop_assert!(ks.k.iter().chain(&ks.l).all(TriField::is_zero));
        }
    }
}
