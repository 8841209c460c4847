//! Real roots of monic polynomials via companion-matrix eigenvalues.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Evaluates `x^d + c[d-1] x^(d-1) + ... + c[0]` and its derivative.
///
/// `coeffs` holds the non-leading coefficients in ascending order.
pub fn eval_monic(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut p = 1.0;
    let mut dp = 0.0;
    for &c in coeffs.iter().rev() {
        dp = dp * x + p;
        p = p * x + c;
    }
    (p, dp)
}

/// All roots of a monic polynomial, which must be real.
///
/// The roots are the eigenvalues of the companion matrix, polished with a
/// few Newton steps and returned in ascending order. Roots whose imaginary
/// part exceeds `imag_tol` (relative to the root scale) are rejected.
pub fn real_roots_monic(coeffs: &[f64], imag_tol: f64) -> Result<Vec<f64>> {
    let d = coeffs.len();
    if d == 0 {
        return Ok(Vec::new());
    }
    let mut companion = DMatrix::<f64>::zeros(d, d);
    for i in 1..d {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..d {
        companion[(i, d - 1)] = -coeffs[i];
    }
    let eig = companion.complex_eigenvalues();
    let scale = eig.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);

    let mut roots = Vec::with_capacity(d);
    for z in eig.iter() {
        if z.im.abs() > imag_tol * scale {
            return Err(Error::NonHyperbolic(format!(
                "complex root {:.6} {:+.6}i",
                z.re, z.im
            )));
        }
        let mut x = z.re;
        for _ in 0..4 {
            let (p, dp) = eval_monic(coeffs, x);
            if dp == 0.0 {
                break;
            }
            let next = x - p / dp;
            if !next.is_finite() || (next - x).abs() > 1e-6 * scale {
                // Newton wandering off means a (near) multiple root; keep the
                // eigenvalue estimate and let the caller's gap check decide.
                break;
            }
            x = next;
        }
        roots.push(x);
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(roots)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_with_known_roots() {
        // (x-1)(x-2)(x+3) = x^3 - 7x + 6
        let roots = real_roots_monic(&[6.0, -7.0, 0.0], 1e-9).unwrap();
        let expected = [-3.0, 1.0, 2.0];
        for (r, e) in roots.iter().zip(expected) {
            assert!((r - e).abs() < 1e-12, "{r} vs {e}");
        }
    }

    #[test]
    fn complex_roots_are_rejected() {
        // x^2 + 1
        assert!(matches!(
            real_roots_monic(&[1.0, 0.0], 1e-9),
            Err(Error::NonHyperbolic(_))
        ));
    }

    #[test]
    fn eval_matches_horner() {
        let (p, dp) = eval_monic(&[6.0, -7.0, 0.0], 2.5);
        assert!((p - (2.5f64.powi(3) - 7.0 * 2.5 + 6.0)).abs() < 1e-12);
        assert!((dp - (3.0 * 2.5f64.powi(2) - 7.0)).abs() < 1e-12);
    }
}
