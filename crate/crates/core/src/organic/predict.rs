//! Posterior inference for a session and next-item prediction.

use super::{
    em::em_cycle_stats, BouchardState, DiagGaussianPosterior, FullGaussianPosterior,
    OrganicParams, SessionStats,
};
use crate::math::{cholesky_jitter, softmax_in_place, RngStream};
use crate::Result;

/// How to turn a session into a posterior over the user state.
#[derive(Debug, Clone, Copy)]
pub enum InferenceMethod {
    /// Apply the trained encoder to the session's count vector.
    Encoder,
    /// Run the variational EM updates from the prior.
    Em { iters: usize },
}

impl InferenceMethod {
    /// The configuration used throughout the experiments: 100 EM iterations.
    pub fn em_default() -> Self {
        InferenceMethod::Em { iters: 100 }
    }
}

/// A posterior from either inference path.
#[derive(Debug, Clone)]
pub enum Posterior {
    Diag(DiagGaussianPosterior),
    Full(FullGaussianPosterior),
}

impl Posterior {
    pub fn mean(&self) -> &[f64] {
        match self {
            Posterior::Diag(d) => &d.mu,
            Posterior::Full(f) => &f.mu,
        }
    }

    /// Marginal variances.
    pub fn marginal_var(&self) -> Vec<f64> {
        match self {
            Posterior::Diag(d) => d.var.clone(),
            Posterior::Full(f) => (0..f.mu.len()).map(|i| f.cov[(i, i)]).collect(),
        }
    }

    /// One draw ω ~ q.
    pub fn sample(&self, rng: &mut RngStream) -> Result<Vec<f64>> {
        match self {
            Posterior::Diag(d) => Ok((0..d.mu.len())
                .map(|i| d.mu[i] + d.var[i].sqrt() * rng.standard_normal())
                .collect()),
            Posterior::Full(f) => {
                let l = cholesky_jitter(&f.cov)?;
                let eps = rng.standard_normal_vec(f.mu.len());
                let mut draw = f.mu.clone();
                for i in 0..draw.len() {
                    for j in 0..=i {
                        draw[i] += l[(i, j)] * eps[j];
                    }
                }
                Ok(draw)
            }
        }
    }
}

/// Infer the user-state posterior for a session.
///
/// The EM path runs `iters` cycles from the prior (μ = 0, Σ = I, a = 0,
/// ξ = 1) and returns a full-covariance posterior; an empty session comes
/// back as the prior itself.
pub fn infer_posterior_em(
    params: &OrganicParams,
    items: &[u32],
    iters: usize,
) -> Result<Posterior> {
    assert!(iters >= 1, "EM inference needs at least one iteration");
    let stats = SessionStats::from_items(items, params.p())?;
    let mut post = FullGaussianPosterior::standard(params.k());
    let mut bstate = BouchardState::init(params.p());
    for _ in 0..iters {
        let (new_post, new_bstate) = em_cycle_stats(params, &bstate, &post, &stats)?;
        post = new_post;
        bstate = new_bstate;
    }
    Ok(Posterior::Full(post))
}

/// Encoder-or-EM front door used by models that own an encoder.
pub fn infer_posterior(
    params: &OrganicParams,
    encoder: &super::Encoder,
    items: &[u32],
    method: InferenceMethod,
) -> Result<Posterior> {
    match method {
        InferenceMethod::Encoder => {
            let stats = SessionStats::from_items(items, params.p())?;
            Ok(Posterior::Diag(encoder.encode_stats(&stats, params.p())))
        }
        InferenceMethod::Em { iters } => infer_posterior_em(params, items, iters),
    }
}

/// How to integrate the posterior when predicting the next item.
#[derive(Debug, Clone, Copy)]
pub enum PredictMode {
    /// Monte Carlo average of softmax(Ψω + ρ) over posterior draws.
    Mc { samples: usize },
    /// Point estimate: softmax(Ψμ + ρ).
    Mean,
}

impl PredictMode {
    pub fn mc_default() -> Self {
        PredictMode::Mc { samples: 100 }
    }
}

/// Predictive distribution over the next item; sums to one.
pub fn next_item_probs(
    params: &OrganicParams,
    post: &Posterior,
    mode: PredictMode,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let p = params.p();
    match mode {
        PredictMode::Mean => {
            let mut probs = logits(params, post.mean());
            softmax_in_place(&mut probs);
            Ok(probs)
        }
        PredictMode::Mc { samples } => {
            assert!(samples >= 1);
            let mut acc = vec![0.0; p];
            for _ in 0..samples {
                let omega = post.sample(rng)?;
                let mut probs = logits(params, &omega);
                softmax_in_place(&mut probs);
                for (a, x) in acc.iter_mut().zip(&probs) {
                    *a += x;
                }
            }
            for a in acc.iter_mut() {
                *a /= samples as f64;
            }
            Ok(acc)
        }
    }
}

fn logits(params: &OrganicParams, omega: &[f64]) -> Vec<f64> {
    let mut z = params.psi.matvec(omega);
    for (x, r) in z.iter_mut().zip(&params.rho) {
        *x += r;
    }
    z
}

/// Convenience: full-covariance posteriors as diagonal ones (marginals),
/// for interfaces that only consume diagonals.
pub fn to_diag(post: &Posterior) -> DiagGaussianPosterior {
    DiagGaussianPosterior { mu: post.mean().to_vec(), var: post.marginal_var() }
}
