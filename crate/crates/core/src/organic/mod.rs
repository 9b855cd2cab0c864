//! The BLO organic session model.
//!
//! Users carry a K-dimensional latent state with a standard-normal prior;
//! sessions are i.i.d. categorical-softmax views in the item embeddings.
//! Embeddings are learned by maximum likelihood with a variational posterior
//! over the user state, through any of three interchangeable lower bounds on
//! the log-softmax term (reparameterization sampling, the Bouchard quadratic
//! bound, the log-concave bound) plus a closed-form variational EM and its
//! Robbins-Monro online variant.

mod bounds;
mod em;
mod predict;
mod serialize;
mod train;

pub use bounds::{
    elbo_bouchard, elbo_bouchard_full, elbo_bouchard_grads, elbo_bouchard_negsampled,
    elbo_logconcave, elbo_logconcave_grads, elbo_reparam, elbo_reparam_grads, optimal_phi,
    BouchardGrads, ReparamGrads,
};
pub use em::{em_cycle, online_em_step, optimize_bouchard_state, OnlineEmState};
pub use predict::{
    infer_posterior, infer_posterior_em, next_item_probs, to_diag, InferenceMethod, Posterior,
    PredictMode,
};
pub use serialize::{load_organic_model, save_organic_model, OrganicModelFile};
pub use train::{fit_vae, DeepEncoder, Encoder, LinearEncoder, TrainedOrganic};

use crate::math::Matrix;
use serde::{Deserialize, Serialize};

/// Learned organic parameters: item embeddings and popularity intercept.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrganicParams {
    /// P x K item embedding matrix.
    pub psi: Matrix,
    /// Length-P popularity intercept.
    pub rho: Vec<f64>,
}

impl OrganicParams {
    pub fn p(&self) -> usize {
        self.psi.rows()
    }

    pub fn k(&self) -> usize {
        self.psi.cols()
    }
}

/// Per-user diagonal Gaussian variational posterior over the latent state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagGaussianPosterior {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussianPosterior {
    pub fn standard(k: usize) -> Self {
        DiagGaussianPosterior { mu: vec![0.0; k], var: vec![1.0; k] }
    }
}

/// Full-covariance Gaussian posterior, produced by the EM updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FullGaussianPosterior {
    pub mu: Vec<f64>,
    pub cov: Matrix,
}

impl FullGaussianPosterior {
    pub fn standard(k: usize) -> Self {
        FullGaussianPosterior { mu: vec![0.0; k], cov: Matrix::identity(k) }
    }
}

/// Extra variational parameters of the Bouchard bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BouchardState {
    pub a: f64,
    /// Per-item quadratic-bound pivots, all >= 0.
    pub xi: Vec<f64>,
}

impl BouchardState {
    /// The documented initialization: a = 0, xi = 1.
    pub fn init(p: usize) -> Self {
        BouchardState { a: 0.0, xi: vec![1.0; p] }
    }
}

/// Which lower bound the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Reparam,
    Bouchard,
    LogConcave,
}

/// Which encoder family the VAE uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Linear,
    Deep,
}

/// Training configuration for the organic model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrganicTrainConfig {
    pub k: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub bound: Bound,
    /// Negative items per step for the subsampled Bouchard bound;
    /// 0 means the full softmax sum.
    pub neg_samples: usize,
    pub l2: f64,
    pub seed: u64,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderKind,
}

fn default_encoder() -> EncoderKind {
    EncoderKind::Linear
}

impl Default for OrganicTrainConfig {
    fn default() -> Self {
        OrganicTrainConfig {
            k: 20,
            learning_rate: 1e-3,
            epochs: 300,
            batch_size: 64,
            bound: Bound::Reparam,
            neg_samples: 0,
            l2: 0.0,
            seed: 0,
            encoder: EncoderKind::Linear,
        }
    }
}

impl OrganicTrainConfig {
    pub fn validate(&self, p: usize) -> crate::Result<()> {
        if self.k < 1 {
            return Err(crate::Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(crate::Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.neg_samples >= p.max(1) && self.neg_samples != 0 {
            return Err(crate::Error::InvalidConfig(format!(
                "neg_samples ({}) must be < P ({p})",
                self.neg_samples
            )));
        }
        if self.l2 < 0.0 {
            return Err(crate::Error::InvalidConfig("l2 must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(crate::Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Session reduced to what the bounds need: length and per-item view counts.
#[derive(Debug, Clone)]
pub(crate) struct SessionStats {
    pub t: f64,
    /// (item, count) pairs for the items that occur.
    pub counts: Vec<(usize, f64)>,
}

impl SessionStats {
    pub fn from_items(items: &[u32], p: usize) -> crate::Result<Self> {
        let mut dense = vec![0.0f64; p];
        for &v in items {
            let v = v as usize;
            if v >= p {
                return Err(crate::Error::ItemIdOutOfRange { item: v, catalog: p });
            }
            dense[v] += 1.0;
        }
        Ok(SessionStats {
            t: items.len() as f64,
            counts: dense
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c > 0.0)
                .map(|(i, &c)| (i, c))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests;
