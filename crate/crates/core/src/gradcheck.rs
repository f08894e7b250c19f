//! Central finite differences for checking hand-written gradients.

/// `(f(x + h e_k) - f(x - h e_k)) / 2h` for every coordinate `k`.
pub fn central_difference<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let plus = f(&probe);
            probe[k] = x[k] - step;
            let minus = f(&probe);
            probe[k] = x[k];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Largest elementwise `|a - b| / max(|a|, |b|, 1e-6)`.
///
/// The floor keeps coordinates whose true derivative is zero (dead ReLU
/// units, unused rows) from dividing round-off by round-off.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
