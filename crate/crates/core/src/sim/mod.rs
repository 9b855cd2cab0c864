//! Synthetic organic/bandit environment.
//!
//! Generates ground-truth parameters, organic sessions, logged bandit
//! feedback under a configurable logging policy, and runs simulated A/B
//! tests. The generative family is exactly the model this crate fits: user
//! states are standard normal, organic views are categorical-softmax in the
//! ground-truth embeddings, and clicks are Bernoulli in a logistic reward.
//! The `flips` parameter permutes reward rows pairwise so that organic
//! similarity and recommendation quality can be decoupled on purpose.

mod abtest;
mod config;
mod ground_truth;
mod io;
mod policy;

pub use abtest::{
    best_action_by_table, measure_policy_ctr, run_ab_test, run_ab_test_oracle, Agent,
    ConstantAgent, RandomAgent,
};
pub use config::SimConfig;
pub use ground_truth::{generate_ground_truth, GroundTruth};
pub use io::{read_bandit_log, read_organic_sessions, write_bandit_log, write_organic_sessions};
pub use policy::{session_pop_logging_policy, LoggingPolicy, SessionPopPolicy, UniformPolicy};

use crate::math::{softmax_in_place, RngStream};
use serde::{Deserialize, Serialize};

/// One organic session: the items a user viewed without intervention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrganicSession {
    pub user_id: u64,
    pub items: Vec<u32>,
}

impl OrganicSession {
    /// Bag-of-items count vector over a catalog of `p` items.
    pub fn count_vector(&self, p: usize) -> Vec<f64> {
        let mut counts = vec![0.0; p];
        for &v in &self.items {
            counts[v as usize] += 1.0;
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One logged recommendation event with its exact logging propensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditRecord {
    pub user_id: u64,
    pub n: u32,
    /// Item counts of the organic history the logging policy saw.
    pub history: Vec<(u32, u32)>,
    pub action: u32,
    pub click: u8,
    pub propensity: f64,
}

impl BanditRecord {
    pub fn history_dense(&self, p: usize) -> Vec<f64> {
        let mut counts = vec![0.0; p];
        for &(item, c) in &self.history {
            counts[item as usize] += c as f64;
        }
        counts
    }
}

/// A bandit log together with the organic sessions interleaved with it.
#[derive(Debug, Clone)]
pub struct BanditLog {
    pub records: Vec<BanditRecord>,
    pub sessions: Vec<OrganicSession>,
}

impl BanditLog {
    pub fn ctr(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.click as f64).sum::<f64>() / self.records.len() as f64
    }
}

/// Outcome of a simulated A/B test for one policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ABTestReport {
    pub policy: String,
    pub displays: u64,
    pub clicks: u64,
    pub ctr: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
}

/// Draw one organic session from the ground truth: a static user state,
/// a Poisson-distributed length of at least one event, and i.i.d.
/// categorical-softmax views.
pub fn generate_organic_session(
    gt: &GroundTruth,
    cfg: &SimConfig,
    user_id: u64,
    rng: &mut RngStream,
) -> OrganicSession {
    let omega = rng.standard_normal_vec(gt.k_true());
    generate_session_for_state(gt, cfg, user_id, &omega, rng)
}

/// Session generation with the user state fixed by the caller.
pub fn generate_session_for_state(
    gt: &GroundTruth,
    cfg: &SimConfig,
    user_id: u64,
    omega: &[f64],
    rng: &mut RngStream,
) -> OrganicSession {
    let t = (rng.poisson(cfg.session_length_mean) as usize).max(1);
    let mut probs = gt.psi_star.matvec(omega);
    for (x, r) in probs.iter_mut().zip(&gt.rho_star) {
        *x += r;
    }
    softmax_in_place(&mut probs);
    let items = (0..t).map(|_| rng.categorical(&probs) as u32).collect();
    OrganicSession { user_id, items }
}

/// Simulate a bandit log: per user draw a state, generate an organic session,
/// then log `bandit_events_per_user` recommendations from `policy` with their
/// exact propensities and Bernoulli clicks from the ground-truth reward.
pub fn simulate_bandit_log(
    gt: &GroundTruth,
    cfg: &SimConfig,
    policy: &dyn LoggingPolicy,
    rng: &mut RngStream,
) -> BanditLog {
    let p = cfg.p;
    let mut records = Vec::with_capacity(cfg.num_bandit_users * cfg.bandit_events_per_user);
    let mut sessions = Vec::with_capacity(cfg.num_bandit_users);
    for user in 0..cfg.num_bandit_users {
        let mut user_rng = rng.fork(user as u64);
        let omega = user_rng.standard_normal_vec(gt.k_true());
        let session = generate_session_for_state(gt, cfg, user as u64, &omega, &mut user_rng);
        let history = sparse_counts(&session, p);
        let history_dense = session.count_vector(p);
        for n in 0..cfg.bandit_events_per_user {
            let (action, propensity) = policy.sample(&history_dense, &mut user_rng);
            let ctr = gt.click_probability(action, &omega);
            let click = u8::from(user_rng.bernoulli(ctr));
            records.push(BanditRecord {
                user_id: user as u64,
                n: n as u32,
                history: history.clone(),
                action: action as u32,
                click,
                propensity,
            });
        }
        sessions.push(session);
    }
    BanditLog { records, sessions }
}

fn sparse_counts(session: &OrganicSession, p: usize) -> Vec<(u32, u32)> {
    let mut dense = vec![0u32; p];
    for &v in &session.items {
        dense[v as usize] += 1;
    }
    dense
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c > 0)
        .map(|(i, &c)| (i as u32, c))
        .collect()
}
