//! Quadrature on uniform grids.
//!
//! Composite trapezoid with the leading Euler–Maclaurin end correction
//! `-dt²/12 · (f'(b) - f'(a))`; derivatives come from second-order finite
//! differences. Error is O(dt⁴) for smooth integrands, which keeps the emission
//! identity `∫f² = 1 - exp(-κ∫sin²θ)` at the 1e-12 level on default grids.

/// Second-order finite-difference derivative (central inside, one-sided at the ends).
pub fn derivative(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    if n < 3 {
        return vec![if n == 2 { (values[1] - values[0]) / dt } else { 0.0 }; n];
    }
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt);
    for k in 1..n - 1 {
        d[k] = (values[k + 1] - values[k - 1]) / (2.0 * dt);
    }
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dt);
    d
}

/// Integral over the whole grid.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    let plain = dt * (inner + 0.5 * (values[0] + values[n - 1]));
    if n < 3 {
        return plain;
    }
    let d = derivative(values, dt);
    plain - dt * dt / 12.0 * (d[n - 1] - d[0])
}

/// Running integral `∫₀^{t_k}`, one entry per sample (first entry 0).
pub fn cumulative_trapezoid(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    for k in 1..n {
        out[k] = out[k - 1] + 0.5 * dt * (values[k - 1] + values[k]);
    }
    if n >= 3 {
        let d = derivative(values, dt);
        for k in 1..n {
            out[k] -= dt * dt / 12.0 * (d[k] - d[0]);
        }
    }
    out
}
