//! Dense small-matrix linear algebra, special functions, seeded RNG streams
//! and a finite-difference gradient checker.
//!
//! Everything here is `f64`; the models in this crate are small and the
//! stability of variational bounds matters more than raw speed. All values
//! are immutable after construction and safe to share across threads;
//! [`RngStream`] is single-owner and parallel code forks child streams.

mod gradcheck;
mod matrix;
mod rng;
mod special;

pub use gradcheck::grad_check;
pub use matrix::{dot, Matrix};
pub use rng::RngStream;
pub use special::{lambda_jj, lambda_jj_deriv, log1p_exp, probit, sigmoid, softplus};

use crate::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = m`.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot is not strictly
/// positive, which signals a degenerate input; callers that can tolerate
/// near-singular inputs should use [`cholesky_jitter`].
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    assert_eq!(m.rows(), m.cols(), "cholesky needs a square matrix");
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::NotPositiveDefinite { index: i, pivot: sum });
                }
                l[(i, j)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Cholesky with the documented jitter policy: on failure, add
/// `1e-8 * trace(m) / dim` to the diagonal once and retry.
pub fn cholesky_jitter(m: &Matrix) -> Result<Matrix> {
    match cholesky(m) {
        Ok(l) => Ok(l),
        Err(_) => {
            let n = m.rows();
            let jitter = 1e-8 * m.trace() / n as f64;
            let mut jittered = m.clone();
            for i in 0..n {
                jittered[(i, i)] += jitter;
            }
            cholesky(&jittered)
        }
    }
}

/// Solve `L y = b` for lower-triangular `L`.
pub fn solve_lower(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for j in 0..i {
            sum -= l[(i, j)] * y[j];
        }
        y[i] = sum / l[(i, i)];
    }
    y
}

/// Solve `Lᵀ x = y` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &Matrix, y: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for j in i + 1..n {
            sum -= l[(j, i)] * x[j];
        }
        x[i] = sum / l[(i, i)];
    }
    x
}

/// Solve `m x = b` for symmetric positive-definite `m` via Cholesky.
pub fn solve_spd(m: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky_jitter(m).map_err(|_| Error::SingularPrecision)?;
    Ok(solve_lower_transpose(&l, &solve_lower(&l, b)))
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn invert_spd(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    let l = cholesky_jitter(m).map_err(|_| Error::SingularPrecision)?;
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for c in 0..n {
        e[c] = 1.0;
        let col = solve_lower_transpose(&l, &solve_lower(&l, &e));
        for r in 0..n {
            inv[(r, c)] = col[r];
        }
        e[c] = 0.0;
    }
    Ok(inv)
}

/// log det of a symmetric positive-definite matrix.
pub fn log_det_spd(m: &Matrix) -> Result<f64> {
    let l = cholesky_jitter(m)?;
    Ok((0..m.rows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0)
}

/// KL(q ‖ p) between diagonal Gaussians given as mean/variance vectors.
pub fn kl_diag_gaussians(
    mu_q: &[f64],
    var_q: &[f64],
    mu_p: &[f64],
    var_p: &[f64],
) -> Result<f64> {
    assert!(
        mu_q.len() == var_q.len() && mu_p.len() == var_p.len() && mu_q.len() == mu_p.len(),
        "dimension mismatch in kl_diag_gaussians"
    );
    let mut kl = 0.0;
    for i in 0..mu_q.len() {
        if var_q[i] <= 0.0 {
            return Err(Error::NonPositiveVariance(var_q[i]));
        }
        if var_p[i] <= 0.0 {
            return Err(Error::NonPositiveVariance(var_p[i]));
        }
        let d = mu_p[i] - mu_q[i];
        kl += 0.5 * (var_q[i] / var_p[i] + d * d / var_p[i] - 1.0 + (var_p[i] / var_q[i]).ln());
    }
    Ok(kl)
}

/// KL(q ‖ N(0, I)) for a diagonal Gaussian; the common special case.
pub fn kl_to_standard_normal(mu: &[f64], var: &[f64]) -> Result<f64> {
    let mut kl = 0.0;
    for i in 0..mu.len() {
        if var[i] <= 0.0 {
            return Err(Error::NonPositiveVariance(var[i]));
        }
        kl += 0.5 * (var[i] + mu[i] * mu[i] - 1.0 - var[i].ln());
    }
    Ok(kl)
}

/// Univariate Gaussian KL(N(mu_q, sig_q²) ‖ N(mu_p, sig_p²)).
pub fn kl_univariate(mu_q: f64, sig_q: f64, mu_p: f64, sig_p: f64) -> f64 {
    let d = mu_q - mu_p;
    (sig_p / sig_q).ln() + (sig_q * sig_q + d * d) / (2.0 * sig_p * sig_p) - 0.5
}

/// Numerically stable log(Σ exp(x_i)).
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Softmax in place; returns the log normalizer.
pub fn softmax_in_place(xs: &mut [f64]) -> f64 {
    let lse = log_sum_exp(xs);
    for x in xs.iter_mut() {
        *x = (*x - lse).exp();
    }
    lse
}
