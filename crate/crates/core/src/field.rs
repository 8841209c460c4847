//! Scalar and matrix-valued coefficient functions on [0, 1].

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Step used for finite-difference derivatives of callable fields.
const FD_STEP: f64 = 1e-6;

#[derive(Clone)]
pub enum CoefficientField {
    Constant(f64),
    /// Piecewise-linear interpolation through `(xs[k], values[k])`.
    Sampled { xs: Vec<f64>, values: Vec<f64> },
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Sampled { xs, .. } => write!(f, "Sampled({} points)", xs.len()),
            Self::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl PartialEq for CoefficientField {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Constant(a), Self::Constant(b)) => a == b,
            (Self::Sampled { xs: a, values: va }, Self::Sampled { xs: b, values: vb }) => {
                a == b && va == vb
            }
            (Self::Function(a), Self::Function(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl From<f64> for CoefficientField {
    fn from(c: f64) -> Self {
        Self::Constant(c)
    }
}

impl CoefficientField {
    pub fn function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Function(Arc::new(f))
    }

    /// Sampled field; abscissae must be strictly increasing and cover [0, 1].
    pub fn sampled(xs: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if xs.len() != values.len() || xs.len() < 2 {
            return Err(Error::Dimension(format!(
                "sampled field needs matching abscissae/values with at least 2 points, got {} and {}",
                xs.len(),
                values.len()
            )));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation("sampled field abscissae must increase strictly".into()));
        }
        if xs[0] > 0.0 || xs[xs.len() - 1] < 1.0 {
            return Err(Error::Validation("sampled field must cover [0, 1]".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("sampled field has non-finite values".into()));
        }
        Ok(Self::Sampled { xs, values })
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Sampled { xs, values } => {
                let k = segment(xs, x);
                let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
                values[k] + t * (values[k + 1] - values[k])
            }
            Self::Function(f) => f(x),
        }
    }

    /// d/dx: exact for constants and sampled data (segment slope),
    /// central differences for callables.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Self::Constant(_) => 0.0,
            Self::Sampled { xs, values } => {
                let k = segment(xs, x);
                (values[k + 1] - values[k]) / (xs[k + 1] - xs[k])
            }
            Self::Function(f) => {
                let lo = (x - FD_STEP).max(0.0);
                let hi = (x + FD_STEP).min(1.0);
                (f(hi) - f(lo)) / (hi - lo)
            }
        }
    }
}

fn segment(xs: &[f64], x: f64) -> usize {
    let last = xs.len() - 2;
    match xs.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
        Ok(k) => k.min(last),
        Err(0) => 0,
        Err(k) => (k - 1).min(last),
    }
}

/// `rows × cols` matrix of coefficient fields.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<CoefficientField>,
}

impl FieldMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_constant(&DMatrix::zeros(rows, cols))
    }

    pub fn from_constant(m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(CoefficientField::Constant(m[(i, j)]));
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            entries,
        }
    }

    /// Row-major list of fields.
    pub fn from_fields(rows: usize, cols: usize, entries: Vec<CoefficientField>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "expected {} fields for a {rows}x{cols} matrix, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> &CoefficientField {
        &self.entries[i * self.cols + j]
    }

    pub fn entry(&self, i: usize, j: usize, x: f64) -> f64 {
        self.get(i, j).eval(x)
    }

    pub fn eval(&self, x: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.entry(i, j, x))
    }

    pub fn is_zero(&self) -> bool {
        self.entries
            .iter()
            .all(|e| matches!(e, CoefficientField::Constant(c) if *c == 0.0))
    }

    /// Largest spectral norm over `samples` uniformly spaced points.
    pub fn sup_norm(&self, samples: usize) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let samples = samples.max(2);
        (0..samples)
            .map(|k| spectral_norm(&self.eval(k as f64 / (samples - 1) as f64)))
            .fold(0.0, f64::max)
    }
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}
