//! Recommendation from combined organic and bandit signals.
//!
//! The library models a user's organic item views with a latent Gaussian
//! categorical-softmax session model (BLO) and layers a Bayesian click model
//! on top of it (BLOB), tying the bandit embeddings to the organic ones
//! through a matrix-variate-normal prior. It ships everything needed to study
//! the model end to end on synthetic data:
//!
//! - [`math`]: small dense linear algebra, special functions, seeded RNG
//!   streams and a finite-difference gradient checker.
//! - [`sim`]: a transparent simulation environment producing organic
//!   sessions, logged bandit feedback and simulated A/B tests.
//! - [`organic`]: the BLO session model with four training/inference
//!   strategies (reparameterized VAE, Bouchard bound, log-concave bound,
//!   variational EM / online EM) and next-item prediction.
//! - [`bandit`]: the Bayesian bandit layer with the local re-parameterization
//!   trick in NQ and MNQ variants.
//! - [`baselines`]: popularity, item-KNN, value logistic regression and an
//!   IPS-trained contextual bandit.
//! - [`eval`]: RC@K / DCG@K ranking metrics and off-policy CTR estimation.
//! - [`cli`]: the experiment pipeline behind the `blob` binary.

pub mod bandit;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod eval;
pub mod math;
pub mod organic;
pub mod sim;

pub use error::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Version tag embedded in every serialized artifact.
pub const FORMAT_VERSION: u32 = 1;
