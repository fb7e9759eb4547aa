//! Central finite differences for checking analytic gradients.

/// Step used by every gradient check in the crate.
pub const FD_STEP: f64 = 1e-6;

/// Central-difference gradient of `f` at `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖numeric − analytic‖_∞ / max(‖analytic‖_∞, ‖numeric‖_∞, floor)`.
///
/// The floor keeps a vanishing gradient from turning rounding noise into a large ratio.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / inf(analytic).max(inf(numeric)).max(1e-8)
}
