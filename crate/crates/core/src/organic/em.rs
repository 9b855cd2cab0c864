//! Variational EM for the per-user posterior under the Bouchard bound, plus
//! its Robbins-Monro online form.
//!
//! The bound is quadratic in the user state, so each update below is an exact
//! coordinate maximization and one full cycle never decreases the bound:
//! precision, then mean, then the pivot `a`, then the per-item `ξ`.

use super::{BouchardState, FullGaussianPosterior, OrganicParams, SessionStats};
use crate::math::{dot, invert_spd, lambda_jj, Matrix};
use crate::Result;

/// One EM cycle: updates (Σ, μ, a, ξ) in order and returns the new posterior
/// and Bouchard state.
pub fn em_cycle(
    params: &OrganicParams,
    bstate: &BouchardState,
    post: &FullGaussianPosterior,
    items: &[u32],
) -> Result<(FullGaussianPosterior, BouchardState)> {
    let stats = SessionStats::from_items(items, params.p())?;
    em_cycle_stats(params, bstate, post, &stats)
}

pub(crate) fn em_cycle_stats(
    params: &OrganicParams,
    bstate: &BouchardState,
    _post: &FullGaussianPosterior,
    stats: &SessionStats,
) -> Result<(FullGaussianPosterior, BouchardState)> {
    let (p, k) = (params.p(), params.k());
    let t = stats.t;
    let a = bstate.a;

    // Σ⁻¹ = I + 2T Σ_p λ(ξ_p) Ψ_pᵀ Ψ_p
    let mut precision = Matrix::identity(k);
    for item in 0..p {
        let lam = lambda_jj(bstate.xi[item]);
        let row = params.psi.row(item);
        let w = 2.0 * t * lam;
        for i in 0..k {
            for j in 0..k {
                precision[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    let cov = invert_spd(&precision)?;

    // μ = Σ (Σ_t Ψ_{v_t}ᵀ − T Σ_p {1/2 + 2(ρ_p − a) λ(ξ_p)} Ψ_pᵀ)
    let mut shift = vec![0.0; k];
    for &(item, c) in &stats.counts {
        let row = params.psi.row(item);
        for i in 0..k {
            shift[i] += c * row[i];
        }
    }
    for item in 0..p {
        let lam = lambda_jj(bstate.xi[item]);
        let w = t * (0.5 + 2.0 * (params.rho[item] - a) * lam);
        let row = params.psi.row(item);
        for i in 0..k {
            shift[i] -= w * row[i];
        }
    }
    let mu = cov.matvec(&shift);

    // a = (−1 + P/2 + 2 Σ_p λ(ξ_p)(Ψ_p μ + ρ_p)) / (2 Σ_p λ(ξ_p))
    let mut lam_sum = 0.0;
    let mut lam_m_sum = 0.0;
    for item in 0..p {
        let lam = lambda_jj(bstate.xi[item]);
        let m = dot(params.psi.row(item), &mu) + params.rho[item];
        lam_sum += lam;
        lam_m_sum += lam * m;
    }
    let a_new = (-1.0 + p as f64 / 2.0 + 2.0 * lam_m_sum) / (2.0 * lam_sum);

    // ξ_p = sqrt(Ψ_p Σ Ψ_pᵀ + (Ψ_p μ + ρ_p − a)²)
    let mut xi = vec![0.0; p];
    for item in 0..p {
        let row = params.psi.row(item);
        let quad = dot(row, &cov.matvec(row));
        let m = dot(row, &mu) + params.rho[item];
        xi[item] = (quad + (m - a_new) * (m - a_new)).sqrt();
    }

    Ok((FullGaussianPosterior { mu, cov }, BouchardState { a: a_new, xi }))
}

/// Optimize (a, ξ) alone for a fixed Gaussian posterior by cycling their
/// coordinate updates. Used by the trainer, which owns μ and Σ elsewhere.
pub fn optimize_bouchard_state(
    params: &OrganicParams,
    mu: &[f64],
    var: &[f64],
    cycles: usize,
) -> BouchardState {
    let p = params.p();
    let mut state = BouchardState::init(p);
    let ms: Vec<f64> =
        (0..p).map(|item| dot(params.psi.row(item), mu) + params.rho[item]).collect();
    let qs: Vec<f64> = (0..p)
        .map(|item| {
            let row = params.psi.row(item);
            row.iter().zip(var).map(|(x, v)| x * x * v).sum()
        })
        .collect();
    for _ in 0..cycles {
        let mut lam_sum = 0.0;
        let mut lam_m_sum = 0.0;
        for item in 0..p {
            let lam = lambda_jj(state.xi[item]);
            lam_sum += lam;
            lam_m_sum += lam * ms[item];
        }
        state.a = (-1.0 + p as f64 / 2.0 + 2.0 * lam_m_sum) / (2.0 * lam_sum);
        for item in 0..p {
            let d = ms[item] - state.a;
            state.xi[item] = (qs[item] + d * d).sqrt();
        }
    }
    state
}

/// Natural-parameter state of the online EM: (Σ⁻¹, Σ⁻¹μ, a).
#[derive(Debug, Clone)]
pub struct OnlineEmState {
    pub precision: Matrix,
    pub shift: Vec<f64>,
    pub a: f64,
}

impl OnlineEmState {
    pub fn init(k: usize) -> Self {
        OnlineEmState { precision: Matrix::identity(k), shift: vec![0.0; k], a: 0.0 }
    }

    /// Recover (μ, Σ) from the natural parameters.
    pub fn to_posterior(&self) -> Result<FullGaussianPosterior> {
        let cov = invert_spd(&self.precision)?;
        let mu = cov.matvec(&self.shift);
        Ok(FullGaussianPosterior { mu, cov })
    }

    /// Flat natural-parameter vector, for convergence measurements.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.precision.data().to_vec();
        v.extend_from_slice(&self.shift);
        v.push(self.a);
        v
    }
}

/// One Robbins-Monro step on a subset of softmax items.
///
/// The fixed-point map decomposes over the catalog; `items` holds the
/// sampled subset whose contributions are reweighted by P/|items| so the
/// step is unbiased for the full-batch update. With `items` = the whole
/// catalog and `delta` = 1 the step reproduces the batch cycle's natural
/// parameters exactly. `delta` follows a decaying schedule with Δ₁ = 1,
/// default Δ_s = s^(-0.7).
pub fn online_em_step(
    state: &OnlineEmState,
    params: &OrganicParams,
    session_items: &[u32],
    items: &[usize],
    delta: f64,
) -> Result<OnlineEmState> {
    let stats = SessionStats::from_items(session_items, params.p())?;
    let (p, k) = (params.p(), params.k());
    let t = stats.t;
    assert!(!items.is_empty(), "online EM step needs at least one item");
    let scale = p as f64 / items.len() as f64;

    let posterior = state.to_posterior()?;
    let (mu, cov, a) = (&posterior.mu, &posterior.cov, state.a);

    let mut g_precision = Matrix::identity(k);
    let mut g_shift = vec![0.0; k];
    for &(item, c) in &stats.counts {
        let row = params.psi.row(item);
        for i in 0..k {
            g_shift[i] += c * row[i];
        }
    }
    let mut a_residual = -1.0 + p as f64 / 2.0;
    for &item in items {
        let row = params.psi.row(item);
        let m = dot(row, mu) + params.rho[item];
        let quad = dot(row, &cov.matvec(row));
        let xi = (quad + (m - a) * (m - a)).sqrt();
        let lam = lambda_jj(xi);

        let wp = 2.0 * t * scale * lam;
        for i in 0..k {
            for j in 0..k {
                g_precision[(i, j)] += wp * row[i] * row[j];
            }
        }
        let ws = t * scale * (0.5 + 2.0 * (params.rho[item] - a) * lam);
        for i in 0..k {
            g_shift[i] -= ws * row[i];
        }
        a_residual += scale * 2.0 * lam * (m - a);
    }
    // gradient-style step on a, zero exactly at the coordinate optimum
    let g_a = a + 0.5 * a_residual;

    let mut precision = state.precision.clone();
    precision.scale(1.0 - delta);
    precision.add_scaled(&g_precision, delta);
    let shift: Vec<f64> = state
        .shift
        .iter()
        .zip(&g_shift)
        .map(|(s, g)| (1.0 - delta) * s + delta * g)
        .collect();
    Ok(OnlineEmState { precision, shift, a: (1.0 - delta) * state.a + delta * g_a })
}
