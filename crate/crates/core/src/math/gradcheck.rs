//! Finite-difference gradient checker shared by every bound implementation.

/// Compare a claimed gradient against central differences at `point`.
///
/// Uses a per-coordinate step `h = 1e-5 * (1 + |θᵢ|)` and returns the largest
/// relative error `|gᵢ − ĝᵢ| / (1e-8 + |gᵢ| + |ĝᵢ|)` over all coordinates.
pub fn grad_check(
    f: &mut dyn FnMut(&[f64]) -> f64,
    claimed_grad: &[f64],
    point: &[f64],
) -> f64 {
    assert_eq!(claimed_grad.len(), point.len());
    let mut theta = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let h = 1e-5 * (1.0 + point[i].abs());
        theta[i] = point[i] + h;
        let up = f(&theta);
        theta[i] = point[i] - h;
        let down = f(&theta);
        theta[i] = point[i];
        let numeric = (up - down) / (2.0 * h);
        let g = claimed_grad[i];
        let rel = (g - numeric).abs() / (1e-8 + g.abs() + numeric.abs());
        worst = worst.max(rel);
    }
    worst
}
