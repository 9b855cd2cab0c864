//! Logging policies with exact propensities.

use crate::math::RngStream;

/// A stochastic policy with full support used to produce bandit logs.
pub trait LoggingPolicy {
    /// Sample an action for a user with the given history counts; returns the
    /// action and the exact probability the policy assigned to it.
    fn sample(&self, history: &[f64], rng: &mut RngStream) -> (usize, f64);

    /// Probability the policy assigns to `action` given `history`.
    fn propensity(&self, history: &[f64], action: usize) -> f64;
}

/// Session-popularity policy with epsilon-greedy exploration: probability
/// 1−ε is shared proportionally to the items in the user's history, ε is
/// spread uniformly. Falls back to uniform when the history is empty.
#[derive(Debug, Clone)]
pub struct SessionPopPolicy {
    pub epsilon: f64,
}

impl SessionPopPolicy {
    pub fn new(epsilon: f64) -> Self {
        assert!((0.0..=1.0).contains(&epsilon), "epsilon must lie in [0,1]");
        SessionPopPolicy { epsilon }
    }

    fn probs(&self, history: &[f64]) -> Vec<f64> {
        let p = history.len();
        let total: f64 = history.iter().sum();
        if total <= 0.0 {
            return vec![1.0 / p as f64; p];
        }
        history
            .iter()
            .map(|&h| (1.0 - self.epsilon) * h / total + self.epsilon / p as f64)
            .collect()
    }
}

impl LoggingPolicy for SessionPopPolicy {
    fn sample(&self, history: &[f64], rng: &mut RngStream) -> (usize, f64) {
        let probs = self.probs(history);
        let action = rng.categorical(&probs);
        (action, probs[action])
    }

    fn propensity(&self, history: &[f64], action: usize) -> f64 {
        self.probs(history)[action]
    }
}

/// Uniform-random policy; propensity 1/P everywhere.
#[derive(Debug, Clone, Default)]
pub struct UniformPolicy;

impl LoggingPolicy for UniformPolicy {
    fn sample(&self, history: &[f64], rng: &mut RngStream) -> (usize, f64) {
        let p = history.len();
        (rng.below(p), 1.0 / p as f64)
    }

    fn propensity(&self, history: &[f64], _action: usize) -> f64 {
        1.0 / history.len() as f64
    }
}

/// Functional form of the session-popularity draw, for callers that do not
/// want to hold a policy value.
pub fn session_pop_logging_policy(
    history: &[f64],
    epsilon: f64,
    rng: &mut RngStream,
) -> (usize, f64) {
    SessionPopPolicy::new(epsilon).sample(history, rng)
}
