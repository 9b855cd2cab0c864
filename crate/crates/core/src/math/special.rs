//! Scalar special functions.

/// Overflow-safe softplus log(1 + eˣ).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() }
}

/// Alias with the conventional name used next to log-likelihoods.
pub fn log1p_exp(x: f64) -> f64 {
    softplus(x)
}

/// Overflow-safe logistic 1 / (1 + e⁻ˣ); output in (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The Jaakkola-Jordan function λ(ξ) = (sigmoid(ξ) − 1/2) / (2ξ), the
/// curvature of the quadratic logistic bound. Even in ξ, with λ(0) = 1/8.
pub fn lambda_jj(xi: f64) -> f64 {
    let z = xi.abs(); // λ is even; evaluate on |ξ| so the symmetry is exact
    if z < 1e-4 {
        // tanh(ξ/2)/(4ξ) expanded around 0
        0.125 - z * z / 96.0
    } else {
        (sigmoid(z) - 0.5) / (2.0 * z)
    }
}

/// dλ/dξ, needed for gradients of the Bouchard bound in ξ.
pub fn lambda_jj_deriv(xi: f64) -> f64 {
    if xi.abs() < 1e-4 {
        -xi / 48.0
    } else {
        let s = sigmoid(xi);
        // derivative of (s - 1/2)/(2ξ)
        (s * (1.0 - s)) / (2.0 * xi) - (s - 0.5) / (2.0 * xi * xi)
    }
}

/// Inverse standard-normal CDF (Acklam's rational approximation, |err| < 1e-9).
/// Used for confidence-interval z values at arbitrary levels.
pub fn probit(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probit requires p in (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    x
}
