//! Variational lower bounds on the organic session log-likelihood.
//!
//! All three bounds share the same structure: the affinity term of the
//! observed views, a bound on T times the log-softmax normalizer, and the
//! KL between the variational posterior and the standard-normal prior.
//! Gradients are hand-derived; every one of them is covered by the
//! finite-difference checker in the tests.

use super::{BouchardState, DiagGaussianPosterior, FullGaussianPosterior, OrganicParams, SessionStats};
use crate::math::{
    dot, kl_to_standard_normal, lambda_jj, lambda_jj_deriv, log_det_spd, log_sum_exp, sigmoid,
    softplus, Matrix,
};
use crate::{Error, Result};

/// Gradients of a bound with respect to the Gaussian posterior and the model.
#[derive(Debug, Clone)]
pub struct ReparamGrads {
    pub value: f64,
    pub d_mu: Vec<f64>,
    pub d_logvar: Vec<f64>,
    pub d_psi: Matrix,
    pub d_rho: Vec<f64>,
}

/// Reparam gradients plus the Bouchard-specific variational parameters.
#[derive(Debug, Clone)]
pub struct BouchardGrads {
    pub value: f64,
    pub d_mu: Vec<f64>,
    pub d_logvar: Vec<f64>,
    pub d_psi: Matrix,
    pub d_rho: Vec<f64>,
    pub d_a: f64,
    pub d_xi: Vec<f64>,
}

fn data_term(params: &OrganicParams, mu: &[f64], stats: &SessionStats) -> f64 {
    stats
        .counts
        .iter()
        .map(|&(p, c)| c * (dot(params.psi.row(p), mu) + params.rho[p]))
        .sum()
}

/// Single-sample reparameterized ELBO: the affinity term at the posterior
/// mean, minus T times the log-sum-exp evaluated at ω = μ + √var ⊙ ε, minus
/// the closed-form KL.
pub fn elbo_reparam(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    items: &[u32],
    eps: &[f64],
) -> Result<f64> {
    let stats = SessionStats::from_items(items, params.p())?;
    Ok(elbo_reparam_stats(params, post, &stats, eps)?.0)
}

pub(crate) fn elbo_reparam_stats(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    stats: &SessionStats,
    eps: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let k = params.k();
    assert_eq!(eps.len(), k, "eps must have K entries");
    let omega: Vec<f64> = (0..k).map(|i| post.mu[i] + post.var[i].sqrt() * eps[i]).collect();
    let mut logits = params.psi.matvec(&omega);
    for (z, r) in logits.iter_mut().zip(&params.rho) {
        *z += r;
    }
    let lse = log_sum_exp(&logits);
    let kl = kl_to_standard_normal(&post.mu, &post.var)?;
    Ok((data_term(params, &post.mu, stats) - stats.t * lse - kl, logits))
}

/// Reparameterized ELBO with gradients in (μ, log var, Ψ, ρ).
pub fn elbo_reparam_grads(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    items: &[u32],
    eps: &[f64],
) -> Result<ReparamGrads> {
    let stats = SessionStats::from_items(items, params.p())?;
    elbo_reparam_grads_stats(params, post, &stats, eps)
}

pub(crate) fn elbo_reparam_grads_stats(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    stats: &SessionStats,
    eps: &[f64],
) -> Result<ReparamGrads> {
    let (p, k) = (params.p(), params.k());
    let (value, mut softmax) = elbo_reparam_stats(params, post, stats, eps)?;
    let lse = log_sum_exp(&softmax);
    for z in softmax.iter_mut() {
        *z = (*z - lse).exp();
    }

    let mut d_mu = vec![0.0; k];
    let mut d_logvar = vec![0.0; k];
    let mut d_psi = Matrix::zeros(p, k);
    let mut d_rho = vec![0.0; p];

    // data term
    for &(item, c) in &stats.counts {
        let row = params.psi.row(item);
        for i in 0..k {
            d_mu[i] += c * row[i];
            d_psi[(item, i)] += c * post.mu[i];
        }
        d_rho[item] += c;
    }

    // -T * logsumexp(Ψω + ρ) with ω = μ + σ ⊙ ε
    let omega: Vec<f64> = (0..k).map(|i| post.mu[i] + post.var[i].sqrt() * eps[i]).collect();
    let mut d_omega = vec![0.0; k];
    for item in 0..p {
        let w = stats.t * softmax[item];
        let row = params.psi.row(item);
        let d_psi_row = d_psi.row_mut(item);
        for i in 0..k {
            d_omega[i] -= w * row[i];
            d_psi_row[i] -= w * omega[i];
        }
        d_rho[item] -= w;
    }
    for i in 0..k {
        d_mu[i] += d_omega[i];
        // dω/d logvar = ε σ / 2
        d_logvar[i] += d_omega[i] * eps[i] * post.var[i].sqrt() * 0.5;
    }

    // -KL
    for i in 0..k {
        d_mu[i] -= post.mu[i];
        d_logvar[i] -= 0.5 * (post.var[i] - 1.0);
    }

    Ok(ReparamGrads { value, d_mu, d_logvar, d_psi, d_rho })
}

/// Analytic Bouchard bound with a diagonal posterior.
pub fn elbo_bouchard(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    bstate: &BouchardState,
    items: &[u32],
) -> Result<f64> {
    let stats = SessionStats::from_items(items, params.p())?;
    let quad = |item: usize| -> f64 {
        let row = params.psi.row(item);
        row.iter().zip(&post.var).map(|(x, v)| x * x * v).sum()
    };
    let kl = kl_to_standard_normal(&post.mu, &post.var)?;
    Ok(bouchard_core(params, &post.mu, quad, bstate, &stats, kl))
}

/// Bouchard bound with a full-covariance posterior (the EM setting).
pub fn elbo_bouchard_full(
    params: &OrganicParams,
    post: &FullGaussianPosterior,
    bstate: &BouchardState,
    items: &[u32],
) -> Result<f64> {
    let stats = SessionStats::from_items(items, params.p())?;
    let quad = |item: usize| -> f64 {
        let row = params.psi.row(item);
        let sv = post.cov.matvec(row);
        dot(row, &sv)
    };
    let k = params.k();
    let trace = post.cov.trace();
    let musq = dot(&post.mu, &post.mu);
    let logdet = log_det_spd(&post.cov)?;
    let kl = 0.5 * (trace + musq - k as f64 - logdet);
    Ok(bouchard_core(params, &post.mu, quad, bstate, &stats, kl))
}

fn bouchard_core(
    params: &OrganicParams,
    mu: &[f64],
    quad: impl Fn(usize) -> f64,
    bstate: &BouchardState,
    stats: &SessionStats,
    kl: f64,
) -> f64 {
    let p = params.p();
    let a = bstate.a;
    let mut softmax_bound = a;
    for item in 0..p {
        let m = dot(params.psi.row(item), mu) + params.rho[item];
        let xi = bstate.xi[item];
        softmax_bound += (m - a - xi) / 2.0
            + softplus(xi)
            + lambda_jj(xi) * ((m - a) * (m - a) + quad(item) - xi * xi);
    }
    data_term(params, mu, stats) - stats.t * softmax_bound - kl
}

/// Negative-sampled Bouchard bound: the sum over the catalog is replaced by
/// (P/S) times the sum over `neg_items`, which must be drawn uniformly
/// without replacement. With S = P (each item once) it equals the full bound.
pub fn elbo_bouchard_negsampled(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    bstate: &BouchardState,
    items: &[u32],
    neg_items: &[usize],
) -> Result<f64> {
    let stats = SessionStats::from_items(items, params.p())?;
    let kl = kl_to_standard_normal(&post.mu, &post.var)?;
    let a = bstate.a;
    let scale = params.p() as f64 / neg_items.len() as f64;
    let mut softmax_bound = a;
    for &item in neg_items {
        let row = params.psi.row(item);
        let m = dot(row, &post.mu) + params.rho[item];
        let xi = bstate.xi[item];
        let q: f64 = row.iter().zip(&post.var).map(|(x, v)| x * x * v).sum();
        softmax_bound += scale
            * ((m - a - xi) / 2.0
                + softplus(xi)
                + lambda_jj(xi) * ((m - a) * (m - a) + q - xi * xi));
    }
    Ok(data_term(params, &post.mu, &stats) - stats.t * softmax_bound - kl)
}

/// Bouchard bound with gradients in (μ, log var, Ψ, ρ, a, ξ).
pub fn elbo_bouchard_grads(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    bstate: &BouchardState,
    items: &[u32],
) -> Result<BouchardGrads> {
    let stats = SessionStats::from_items(items, params.p())?;
    elbo_bouchard_grads_stats(params, post, bstate, &stats, None)
}

/// Gradient core shared by the full and negative-sampled paths. When
/// `neg_items` is given, catalog sums run over it with weight P/S.
pub(crate) fn elbo_bouchard_grads_stats(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    bstate: &BouchardState,
    stats: &SessionStats,
    neg_items: Option<&[usize]>,
) -> Result<BouchardGrads> {
    let (p, k) = (params.p(), params.k());
    let t = stats.t;
    let a = bstate.a;
    let kl = kl_to_standard_normal(&post.mu, &post.var)?;

    let mut d_mu = vec![0.0; k];
    let mut d_logvar = vec![0.0; k];
    let mut d_psi = Matrix::zeros(p, k);
    let mut d_rho = vec![0.0; p];
    let mut d_xi = vec![0.0; p];

    // data term
    for &(item, c) in &stats.counts {
        let row = params.psi.row(item);
        for i in 0..k {
            d_mu[i] += c * row[i];
            d_psi[(item, i)] += c * post.mu[i];
        }
        d_rho[item] += c;
    }

    let full: Vec<usize>;
    let (catalog, scale): (&[usize], f64) = match neg_items {
        Some(negs) => (negs, p as f64 / negs.len() as f64),
        None => {
            full = (0..p).collect();
            (&full, 1.0)
        }
    };

    let mut softmax_bound = a;
    let mut d_a_sum = 1.0; // d(bound)/da, starting from the standalone a term
    for &item in catalog {
        let row = params.psi.row(item);
        let m = dot(row, &post.mu) + params.rho[item];
        let xi = bstate.xi[item];
        let lam = lambda_jj(xi);
        let q: f64 = row.iter().zip(&post.var).map(|(x, v)| x * x * v).sum();

        softmax_bound +=
            scale * ((m - a - xi) / 2.0 + softplus(xi) + lam * ((m - a) * (m - a) + q - xi * xi));

        let dm = scale * (0.5 + 2.0 * lam * (m - a));
        for i in 0..k {
            d_mu[i] -= t * dm * row[i];
            d_psi[(item, i)] -= t * (dm * post.mu[i] + scale * 2.0 * lam * row[i] * post.var[i]);
            d_logvar[i] -= t * scale * lam * row[i] * row[i] * post.var[i];
        }
        d_rho[item] -= t * dm;
        d_a_sum += scale * (-0.5 - 2.0 * lam * (m - a));
        d_xi[item] = -t
            * scale
            * (-0.5 + sigmoid(xi) + lambda_jj_deriv(xi) * ((m - a) * (m - a) + q - xi * xi)
                - 2.0 * lam * xi);
    }

    // -KL
    for i in 0..k {
        d_mu[i] -= post.mu[i];
        d_logvar[i] -= 0.5 * (post.var[i] - 1.0);
    }

    Ok(BouchardGrads {
        value: data_term(params, &post.mu, stats) - t * softmax_bound - kl,
        d_mu,
        d_logvar,
        d_psi,
        d_rho,
        d_a: -t * d_a_sum,
        d_xi,
    })
}

/// Log-concave bound at an explicit φ > 0.
pub fn elbo_logconcave(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    phi: f64,
    items: &[u32],
) -> Result<f64> {
    if phi <= 0.0 {
        return Err(Error::NonPositivePhi(phi));
    }
    let stats = SessionStats::from_items(items, params.p())?;
    let kl = kl_to_standard_normal(&post.mu, &post.var)?;
    let w = exp_weights(params, post);
    let lse = log_sum_exp(&w);
    // φ Σ_p exp(w_p) computed in log space for stability
    let phi_sum = (phi.ln() + lse).exp();
    Ok(data_term(params, &post.mu, &stats) + stats.t * (-phi_sum + phi.ln() + 1.0) - kl)
}

/// The φ that maximizes the log-concave bound: 1 / Σ_p exp(Ψ_p μ + ρ_p + q_p/2).
pub fn optimal_phi(params: &OrganicParams, post: &DiagGaussianPosterior) -> f64 {
    (-log_sum_exp(&exp_weights(params, post))).exp()
}

fn exp_weights(params: &OrganicParams, post: &DiagGaussianPosterior) -> Vec<f64> {
    (0..params.p())
        .map(|item| {
            let row = params.psi.row(item);
            let q: f64 = row.iter().zip(&post.var).map(|(x, v)| x * x * v).sum();
            dot(row, &post.mu) + params.rho[item] + 0.5 * q
        })
        .collect()
}

/// Log-concave bound with gradients in (μ, log var, Ψ, ρ, log φ).
pub fn elbo_logconcave_grads(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    phi: f64,
    items: &[u32],
) -> Result<(ReparamGrads, f64)> {
    let stats = SessionStats::from_items(items, params.p())?;
    elbo_logconcave_grads_stats(params, post, phi, &stats)
}

pub(crate) fn elbo_logconcave_grads_stats(
    params: &OrganicParams,
    post: &DiagGaussianPosterior,
    phi: f64,
    stats: &SessionStats,
) -> Result<(ReparamGrads, f64)> {
    if phi <= 0.0 {
        return Err(Error::NonPositivePhi(phi));
    }
    let (p, k) = (params.p(), params.k());
    let t = stats.t;
    let kl = kl_to_standard_normal(&post.mu, &post.var)?;
    let w = exp_weights(params, post);
    let lse = log_sum_exp(&w);
    let phi_sum = (phi.ln() + lse).exp();
    let value = data_term(params, &post.mu, stats) + t * (-phi_sum + phi.ln() + 1.0) - kl;

    let mut d_mu = vec![0.0; k];
    let mut d_logvar = vec![0.0; k];
    let mut d_psi = Matrix::zeros(p, k);
    let mut d_rho = vec![0.0; p];

    for &(item, c) in &stats.counts {
        let row = params.psi.row(item);
        for i in 0..k {
            d_mu[i] += c * row[i];
            d_psi[(item, i)] += c * post.mu[i];
        }
        d_rho[item] += c;
    }

    for item in 0..p {
        // φ exp(w_item), stable through the log
        let pe = (phi.ln() + w[item]).exp();
        let row = params.psi.row(item);
        let d_psi_row = d_psi.row_mut(item);
        for i in 0..k {
            d_mu[i] -= t * pe * row[i];
            d_psi_row[i] -= t * pe * (post.mu[i] + row[i] * post.var[i]);
            d_logvar[i] -= t * pe * 0.5 * row[i] * row[i] * post.var[i];
        }
        d_rho[item] -= t * pe;
    }

    for i in 0..k {
        d_mu[i] -= post.mu[i];
        d_logvar[i] -= 0.5 * (post.var[i] - 1.0);
    }

    let d_logphi = t * (1.0 - phi_sum);
    Ok((ReparamGrads { value, d_mu, d_logvar, d_psi, d_rho }, d_logphi))
}
