//! Simulation configuration.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Parameters of the synthetic environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    /// Catalog size.
    pub p: usize,
    /// Ground-truth latent dimension.
    pub k_true: usize,
    pub num_organic_sessions: usize,
    pub num_bandit_users: usize,
    /// Recommendations logged per bandit user.
    #[serde(default = "default_bandit_events")]
    pub bandit_events_per_user: usize,
    /// Poisson mean of session length; lengths are truncated below at 1.
    pub session_length_mean: f64,
    /// Number of items whose reward rows are permuted (pairwise swaps).
    pub flips: usize,
    /// Exploration rate of the session-popularity logging policy.
    pub epsilon: f64,
    /// Expected CTR of the uniform-random policy after calibration.
    pub target_random_ctr: f64,
    /// Scale applied to reward embeddings relative to the organic ones.
    pub beta_scale: f64,
    pub seed: u64,
}

fn default_bandit_events() -> usize {
    20
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            p: 100,
            k_true: 10,
            num_organic_sessions: 2000,
            num_bandit_users: 1000,
            bandit_events_per_user: 20,
            session_length_mean: 20.0,
            flips: 0,
            epsilon: 0.3,
            target_random_ctr: 0.011,
            beta_scale: 1.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 2 {
            return Err(Error::InvalidConfig(format!("p must be >= 2, got {}", self.p)));
        }
        if self.k_true < 1 {
            return Err(Error::InvalidConfig("k_true must be >= 1".into()));
        }
        if self.flips % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "flips must be even, got {}",
                self.flips
            )));
        }
        if self.flips > self.p {
            return Err(Error::InvalidConfig(format!(
                "flips ({}) must not exceed p ({})",
                self.flips, self.p
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must lie in [0,1], got {}",
                self.epsilon
            )));
        }
        if !(self.target_random_ctr > 0.001 && self.target_random_ctr < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "target_random_ctr must lie in (0.001, 0.5), got {}",
                self.target_random_ctr
            )));
        }
        if self.beta_scale <= 0.0 {
            return Err(Error::InvalidConfig("beta_scale must be positive".into()));
        }
        if self.session_length_mean <= 0.0 {
            return Err(Error::InvalidConfig("session_length_mean must be positive".into()));
        }
        if self.bandit_events_per_user == 0 {
            return Err(Error::InvalidConfig("bandit_events_per_user must be >= 1".into()));
        }
        Ok(())
    }
}
