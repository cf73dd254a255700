use alloc::vec::Vec;

use crate::{Error, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate at which `max_rel_error` occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Denominator floor for [`relative_error`]; below it the comparison is
/// effectively absolute.
const REL_FLOOR: f64 = 1e-7;

/// `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares the analytic gradient returned by `f` at `theta` with central
/// differences `(f(θ + ε e_i) − f(θ − ε e_i)) / 2ε` over every coordinate.
///
/// `f` returns `(value, gradient)`; it must be deterministic.
pub fn grad_check<F>(mut f: F, theta: &[f64], epsilon: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (value, analytic) = f(theta)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    if analytic.len() != theta.len() {
        return Err(Error::dim("grad_check", theta.len(), analytic.len()));
    }
    let mut probe = theta.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: theta.len(),
    };
    for i in 0..theta.len() {
        probe[i] = theta[i] + epsilon;
        let (plus, _) = f(&probe)?;
        probe[i] = theta[i] - epsilon;
        let (minus, _) = f(&probe)?;
        probe[i] = theta[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || i == 0 {
            report = GradCheckReport {
                max_rel_error: err,
                worst_index: i,
                analytic: analytic[i],
                numeric,
                coordinates: theta.len(),
            };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn square_is_exact() {
        let r = grad_check(|t| Ok((t[0] * t[0], vec![2.0 * t[0]])), &[3.0], 1e-5).unwrap();
        assert!((r.analytic - 6.0).abs() < 1e-15);
        assert!((r.numeric - 6.0).abs() < 1e-8);
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let r = grad_check(|t| Ok((t[0] * t[0], vec![3.0 * t[0]])), &[1.0], 1e-5).unwrap();
        assert!(r.max_rel_error > 0.3);
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let r = grad_check(|t| Ok((crate::math::ln(t[0]), vec![1.0 / t[0]])), &[-1.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
