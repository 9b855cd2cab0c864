//! Simulated A/B tests against the ground truth.

use super::{generate_session_for_state, ABTestReport, GroundTruth, OrganicSession, SimConfig};
use crate::math::{dot, RngStream};

/// A recommendation agent under test: maps an organic history to an action,
/// deterministically or stochastically.
pub trait Agent {
    fn name(&self) -> &str;
    fn act(&self, session: &OrganicSession, rng: &mut RngStream) -> usize;
}

/// Uniform-random recommendations; the calibration anchor.
pub struct RandomAgent {
    pub p: usize,
}

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn act(&self, _session: &OrganicSession, rng: &mut RngStream) -> usize {
        rng.below(self.p)
    }
}

/// Always recommends the same action.
pub struct ConstantAgent {
    pub action: usize,
}

impl Agent for ConstantAgent {
    fn name(&self) -> &str {
        "constant"
    }

    fn act(&self, _session: &OrganicSession, _rng: &mut RngStream) -> usize {
        self.action
    }
}

/// Run a simulated A/B test over `num_users` fresh users.
///
/// Per user three child streams are forked: one for the user draw, one for
/// the agent and one for the click. Re-running with an equally seeded stream
/// therefore shows every agent the same users and click noise (common random
/// numbers), which sharpens CTR comparisons.
pub fn run_ab_test(
    gt: &GroundTruth,
    cfg: &SimConfig,
    agent: &dyn Agent,
    num_users: usize,
    rng: &mut RngStream,
) -> ABTestReport {
    let mut clicks = 0u64;
    for user in 0..num_users {
        let user_rng = rng.fork(user as u64);
        let mut gen_rng = user_rng.fork(0);
        let mut agent_rng = user_rng.fork(1);
        let mut click_rng = user_rng.fork(2);

        let omega = gen_rng.standard_normal_vec(gt.k_true());
        let session = generate_session_for_state(gt, cfg, user as u64, &omega, &mut gen_rng);
        let action = agent.act(&session, &mut agent_rng);
        let ctr = gt.click_probability(action, &omega);
        if click_rng.bernoulli(ctr) {
            clicks += 1;
        }
    }
    report(agent.name(), num_users as u64, clicks)
}

/// A/B test of a policy that sees the hidden state (the oracle upper bound).
pub fn run_ab_test_oracle(
    gt: &GroundTruth,
    cfg: &SimConfig,
    num_users: usize,
    rng: &mut RngStream,
) -> ABTestReport {
    let mut clicks = 0u64;
    for user in 0..num_users {
        let user_rng = rng.fork(user as u64);
        let mut gen_rng = user_rng.fork(0);
        let mut click_rng = user_rng.fork(2);
        let omega = gen_rng.standard_normal_vec(gt.k_true());
        let _session = generate_session_for_state(gt, cfg, user as u64, &omega, &mut gen_rng);
        let action = gt.oracle_action(&omega);
        if click_rng.bernoulli(gt.click_probability(action, &omega)) {
            clicks += 1;
        }
    }
    report("oracle", num_users as u64, clicks)
}

/// Monte Carlo CTR of an arbitrary state-free policy, measured directly from
/// the ground truth without the session machinery. Used by calibration tests.
pub fn measure_policy_ctr(
    gt: &GroundTruth,
    displays: usize,
    mut pick: impl FnMut(&[f64], &mut RngStream) -> usize,
    rng: &mut RngStream,
) -> f64 {
    let mut clicks = 0u64;
    for _ in 0..displays {
        let omega = rng.standard_normal_vec(gt.k_true());
        let action = pick(&omega, rng);
        if rng.bernoulli(gt.click_probability(action, &omega)) {
            clicks += 1;
        }
    }
    clicks as f64 / displays as f64
}

fn report(name: &str, displays: u64, clicks: u64) -> ABTestReport {
    let ctr = clicks as f64 / displays as f64;
    let (lo, hi) = crate::eval::wilson_ci(clicks, displays, 0.95);
    ABTestReport {
        policy: name.to_string(),
        displays,
        clicks,
        ctr,
        ci95_low: lo,
        ci95_high: hi,
    }
}

/// Dot-product scorer against a fixed reward table; shared by tests.
pub fn best_action_by_table(beta: &crate::math::Matrix, kappa: &[f64], omega: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for a in 0..beta.rows() {
        let v = dot(beta.row(a), omega) + kappa[a];
        if v > best_val {
            best_val = v;
            best = a;
        }
    }
    best
}
