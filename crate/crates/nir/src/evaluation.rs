//! Leave-one-out metrics (HR@K, NDCG@K), the POP and CS-Random baselines,
//! and aggregation of per-user records into a summary.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ItemId, Split, UserId};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to aggregate")]
    Empty,
    #[error("records mix strategies {0:?} and {1:?}")]
    MixedStrategies(String, String),
    #[error("records mix K values {0} and {1}")]
    MixedK(usize, usize),
}

/// 1-based rank of the ground truth in the ranking, if present.
pub fn rank_of_gt(ranking: &[ItemId], gt: ItemId) -> Option<usize> {
    ranking.iter().position(|&i| i == gt).map(|p| p + 1)
}

/// 1 if the ground truth appears within the top K, else 0.
pub fn hit_at_k(ranking: &[ItemId], gt: ItemId, k: usize) -> u8 {
    match rank_of_gt(ranking, gt) {
        Some(rank) if rank <= k => 1,
        _ => 0,
    }
}

/// Single-relevant-item NDCG: 1/log2(rank+1) when the ground truth lands at
/// `rank` within the top K, else 0.
pub fn ndcg_at_k(ranking: &[ItemId], gt: ItemId, k: usize) -> f64 {
    match rank_of_gt(ranking, gt) {
        Some(rank) if rank <= k => 1.0 / ((rank + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// Items ranked by global train-interaction count, ties by smaller item id.
#[derive(Debug, Clone)]
pub struct PopBaseline {
    ranked: Vec<ItemId>,
}

impl PopBaseline {
    pub fn from_split(split: &Split) -> Self {
        let mut counts: HashMap<ItemId, u32> = HashMap::new();
        for history in split.train.values() {
            for &item in &history.items {
                *counts.entry(item).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(ItemId, u32)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        PopBaseline {
            ranked: ranked.into_iter().map(|(item, _)| item).collect(),
        }
    }

    /// Top-k most popular items, optionally skipping the given watched set.
    pub fn recommend(
        &self,
        watched: &BTreeSet<ItemId>,
        k: usize,
        exclude_watched: bool,
    ) -> Vec<ItemId> {
        self.ranked
            .iter()
            .copied()
            .filter(|item| !exclude_watched || !watched.contains(item))
            .take(k)
            .collect()
    }
}

/// Convenience wrapper matching the per-user call shape. `exclude_watched`
/// defaults to true in the pipeline; the commonly reported reference value
/// corresponds to the non-excluding variant.
pub fn pop_baseline(split: &Split, user: UserId, k: usize, exclude_watched: bool) -> Vec<ItemId> {
    let baseline = PopBaseline::from_split(split);
    let watched: BTreeSet<ItemId> = split
        .train
        .get(&user)
        .map(|h| h.items.iter().copied().collect())
        .unwrap_or_default();
    baseline.recommend(&watched, k, exclude_watched)
}

/// Uniform sample without replacement from the candidate list; order is the
/// draw order. The generator is pinned (ChaCha8 seeded from `seed`) so runs
/// reproduce across platforms.
pub fn cs_random_ranking(candidates: &[ItemId], seed: u64, k: usize) -> Vec<ItemId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = candidates.to_vec();
    let take = k.min(pool.len());
    let mut out = Vec::with_capacity(take);
    for i in 0..take {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
        out.push(pool[i]);
    }
    out
}

/// Mixes a run seed with a user id (splitmix64 finalizer) so per-user draws
/// are independent but reproducible.
pub fn derive_user_seed(run_seed: u64, user_id: UserId) -> u64 {
    let mut z = run_seed ^ (user_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-user outcome of one strategy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub user_id: UserId,
    pub strategy: String,
    pub k: usize,
    pub rank_of_gt: Option<usize>,
    pub hit_at_k: u8,
    pub ndcg_at_k: f64,
    pub candidate_contained_gt: Option<bool>,
    pub prompt_digests: Vec<String>,
    pub unresolved_count: usize,
}

/// Aggregate metrics for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub strategy: String,
    pub k: usize,
    pub user_count: usize,
    pub hr_at_k: f64,
    pub ndcg_at_k: f64,
    /// Fraction of users whose candidate set contained the ground truth;
    /// absent for candidate-free strategies.
    pub candidate_coverage: Option<f64>,
}

/// Means over records sharing one strategy and K; order-independent.
pub fn aggregate(records: &[EvalRecord]) -> Result<MetricsSummary, EvalError> {
    let first = records.first().ok_or(EvalError::Empty)?;
    for record in records {
        if record.strategy != first.strategy {
            return Err(EvalError::MixedStrategies(
                first.strategy.clone(),
                record.strategy.clone(),
            ));
        }
        if record.k != first.k {
            return Err(EvalError::MixedK(first.k, record.k));
        }
    }
    let n = records.len() as f64;
    let hr = records.iter().map(|r| r.hit_at_k as f64).sum::<f64>() / n;
    let ndcg = records.iter().map(|r| r.ndcg_at_k).sum::<f64>() / n;
    let covered: Vec<bool> = records
        .iter()
        .filter_map(|r| r.candidate_contained_gt)
        .collect();
    let coverage = if covered.is_empty() {
        None
    } else {
        Some(covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64)
    };
    Ok(MetricsSummary {
        strategy: first.strategy.clone(),
        k: first.k,
        user_count: records.len(),
        hr_at_k: hr,
        ndcg_at_k: ndcg,
        candidate_coverage: coverage,
    })
}
