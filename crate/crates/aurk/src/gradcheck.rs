//! Numerical gradient verification.
//!
//! Central finite differences over a scalar objective. This is the
//! independent oracle for every hand-derived backward pass; it only ever
//! calls forward code.

/// Central difference gradient of `f` at `x`: (f(x+e) - f(x-e)) / 2e per
/// coordinate.
pub fn numerical_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let keep = probe[i];
        probe[i] = keep + eps;
        let up = f(&probe);
        probe[i] = keep - eps;
        let down = f(&probe);
        probe[i] = keep;
        grad[i] = (up - down) / (2.0 * eps);
    }
    grad
}

/// Worst relative error between analytic and numerical gradients, with the
/// denominator floored so that exact zeros do not blow up.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}
