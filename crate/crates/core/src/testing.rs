//! Finite-difference helpers shared by unit tests.

/// Relative error between an analytic gradient and central differences of
/// `f` at `x`, over every coordinate.
pub fn grad_error(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], step: f64) -> f64 {
    let mut probe = x.to_vec();
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        diff += (numeric - analytic[i]).powi(2);
        na += analytic[i].powi(2);
        nn += numeric.powi(2);
    }
    let scale = f64::max(na, nn).sqrt();
    if scale < 1e-12 {
        diff.sqrt()
    } else {
        diff.sqrt() / scale
    }
}
