//! Quadrature on uniform grids.
//!
//! Two layouts are used: node grids `x_k = k h, k = 0..=N` (kernel
//! lattice) and cell-centred grids `x_j = (j + 1/2) dx` (simulation).
//! On cell centres the composite trapezoid rule through the centres,
//! closed with constant half cells at both ends, collapses to
//! `dx * sum(f_j)`.

/// Composite trapezoid over equally spaced nodes including both endpoints.
pub fn trapezoid_nodes(f: &[f64], h: f64) -> f64 {
    match f.len() {
        0 | 1 => 0.0,
        k => h * (0.5 * (f[0] + f[k - 1]) + f[1..k - 1].iter().sum::<f64>()),
    }
}

/// Integral over [0, 1] of cell-centred samples.
pub fn cell_integral(f: &[f64], dx: f64) -> f64 {
    dx * f.iter().sum::<f64>()
}

/// `∫_0^{x_j} f` at every cell centre `x_j`.
pub fn cell_partial_integrals(f: &[f64], dx: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    for &v in f {
        out.push(dx * (acc + 0.5 * v));
        acc += v;
    }
    out
}

/// Error bound `(b-a) h² max|f''| / 12` of the composite trapezoid rule,
/// with `f''` estimated by second differences of the samples.
pub fn trapezoid_error_bound(f: &[f64], h: f64) -> f64 {
    if f.len() < 3 {
        return 0.0;
    }
    let max_dd = f
        .windows(3)
        .map(|w| ((w[0] - 2.0 * w[1] + w[2]) / (h * h)).abs())
        .fold(0.0, f64::max);
    h * h * max_dd / 12.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn trapezoid_exact_for_linear() {
        let f: Vec<f64> = (0..=10).map(|k| 2.0 * k as f64 / 10.0 + 1.0).collect();
        assert_relative_eq!(trapezoid_nodes(&f, 0.1), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn cell_rule_on_quadratic() {
        let n = 200;
        let dx = 1.0 / n as f64;
        let f: Vec<f64> = (0..n).map(|j| ((j as f64 + 0.5) * dx).powi(2)).collect();
        // midpoint error is h²/24 · (f'(1) - f'(0))
        assert_relative_eq!(cell_integral(&f, dx), 1.0 / 3.0 - dx * dx / 12.0, epsilon = 1e-14);
    }

    #[test]
    fn partial_integrals_end_at_total() {
        let f = vec![1.0; 8];
        let p = cell_partial_integrals(&f, 0.125);
        assert_relative_eq!(p[0], 0.0625);
        assert_relative_eq!(p[7], 1.0 - 0.0625);
    }

    #[test]
    fn error_bound_zero_for_linear() {
        let f: Vec<f64> = (0..10).map(|k| k as f64).collect();
        assert_eq!(trapezoid_error_bound(&f, 0.1), 0.0);
    }

    proptest! {
        #[test]
        fn cell_rule_is_linear(a in -3.0..3.0f64, seed in 0u64..1000) {
            let f: Vec<f64> = (0..32).map(|j| ((j as u64 * 31 + seed) % 17) as f64).collect();
            let g: Vec<f64> = f.iter().map(|v| a * v).collect();
            prop_assert!((cell_integral(&g, 1.0 / 32.0) - a * cell_integral(&f, 1.0 / 32.0)).abs() < 1e-12);
        }
    }
}
