//! Ranking metrics for the organic task and off-policy / on-policy CTR
//! estimation for the bandit task.

use crate::math::probit;
use crate::sim::{BanditRecord, OrganicSession};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Aggregate next-item ranking metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub rc_at_k: f64,
    pub dcg_at_k: f64,
    pub k: usize,
    pub sessions_evaluated: usize,
    /// Sessions skipped because they were too short to hold out a target.
    pub sessions_skipped: usize,
}

/// CTR estimate with a 95% confidence interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CtrResult {
    pub ctr: f64,
    pub ci95: (f64, f64),
    pub n_displays: usize,
}

/// Rank of `target` under descending scores with ties broken by lowest item
/// id; rank 1 is best.
fn rank_of(scores: &[f64], target: usize) -> usize {
    let ts = scores[target];
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if s > ts || (s == ts && i < target) {
            rank += 1;
        }
    }
    rank
}

/// 1 if `target` is among the `k` highest-scored items, else 0.
pub fn recall_at_k(scores: &[f64], target: usize, k: usize) -> f64 {
    assert!(k <= scores.len(), "k must not exceed the catalog size");
    if rank_of(scores, target) <= k { 1.0 } else { 0.0 }
}

/// Binary-relevance DCG: 1/log2(rank+1) if the target ranks within k, else 0.
pub fn dcg_at_k(scores: &[f64], target: usize, k: usize) -> f64 {
    assert!(k <= scores.len(), "k must not exceed the catalog size");
    let rank = rank_of(scores, target);
    if rank <= k {
        1.0 / ((rank as f64 + 1.0).log2())
    } else {
        0.0
    }
}

/// Anything that can score every item in the catalog from a session prefix.
pub trait NextItemScorer {
    fn score_items(&self, prefix: &[u32]) -> Vec<f64>;
}

impl<F: Fn(&[u32]) -> Vec<f64>> NextItemScorer for F {
    fn score_items(&self, prefix: &[u32]) -> Vec<f64> {
        self(prefix)
    }
}

/// Hold out the last event of every test session and measure mean RC@K and
/// DCG@K of the model's prediction from the prefix. Sessions shorter than two
/// events cannot be split and are counted as skipped.
pub fn evaluate_next_item(
    model: &dyn NextItemScorer,
    test_sessions: &[OrganicSession],
    k: usize,
) -> RankingMetrics {
    let mut rc = 0.0;
    let mut dcg = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for s in test_sessions {
        if s.items.len() < 2 {
            skipped += 1;
            continue;
        }
        let (target, prefix) = s.items.split_last().unwrap();
        let scores = model.score_items(prefix);
        rc += recall_at_k(&scores, *target as usize, k);
        dcg += dcg_at_k(&scores, *target as usize, k);
        used += 1;
    }
    let denom = used.max(1) as f64;
    RankingMetrics {
        rc_at_k: rc / denom,
        dcg_at_k: dcg / denom,
        k,
        sessions_evaluated: used,
        sessions_skipped: skipped,
    }
}

/// Percentile bootstrap CI (95%) for the mean of per-session binary/graded
/// metric values.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    assert!(!values.is_empty());
    let mut rng = crate::math::RngStream::new(seed, 0xb007);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut acc = 0.0;
            for _ in 0..n {
                acc += values[rng.below(n)];
            }
            acc / n as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let lo_idx = ((resamples as f64) * 0.025).floor() as usize;
    let hi_idx = (((resamples as f64) * 0.975).ceil() as usize).min(resamples - 1);
    (means[lo_idx], means[hi_idx])
}

/// A target policy that assigns probabilities to actions given a history.
pub trait TargetPolicy {
    fn action_probability(&self, history: &[f64], action: usize) -> f64;
}

impl<F: Fn(&[f64], usize) -> f64> TargetPolicy for F {
    fn action_probability(&self, history: &[f64], action: usize) -> f64 {
        self(history, action)
    }
}

/// Inverse-propensity-scoring estimate of a target policy's CTR on a logged
/// dataset, with a normal-approximation CI from the weighted-sample variance.
/// No clipping is applied anywhere.
pub fn ips_estimate(
    log: &[BanditRecord],
    target: &dyn TargetPolicy,
    p: usize,
) -> Result<CtrResult> {
    if log.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = log.len();
    let mut terms = Vec::with_capacity(n);
    for (i, r) in log.iter().enumerate() {
        if r.propensity <= 0.0 {
            return Err(Error::MissingPropensity(i));
        }
        let history = r.history_dense(p);
        let pi = target.action_probability(&history, r.action as usize);
        terms.push(r.click as f64 * pi / r.propensity);
    }
    let mean = terms.iter().sum::<f64>() / n as f64;
    let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
    let se = (var / n as f64).sqrt();
    let z = probit(0.975);
    Ok(CtrResult {
        ctr: mean,
        ci95: (mean - z * se, mean + z * se),
        n_displays: n,
    })
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_ci(clicks: u64, displays: u64, level: f64) -> (f64, f64) {
    assert!(displays >= 1, "wilson_ci needs at least one display");
    assert!(level > 0.0 && level < 1.0);
    let z = probit(0.5 + level / 2.0);
    let n = displays as f64;
    let phat = clicks as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}
