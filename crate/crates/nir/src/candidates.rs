//! Candidate set construction over the training split.
//!
//! Users and items are represented as multi-hot vectors (user over items,
//! item over users). User filtering pools the interacted items of the m most
//! cosine-similar users; item filtering pools the top-n cosine neighbors of
//! each history item. Pooled items are ranked by how many sources nominated
//! them, tie-broken by accumulated similarity mass, then by item id, so the
//! output is a total deterministic order.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ItemId, Split, UserHistory, UserId};

#[derive(Debug, Error)]
pub enum CandidateError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: u32, right: u32 },
    #[error("user {0} not present in the vector index")]
    UnknownUser(UserId),
    #[error("item {0} not present in the vector index")]
    UnknownItem(ItemId),
    #[error("target history is empty")]
    EmptyHistory,
}

/// Multi-hot vector: sorted active indices with implicit value 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseVector {
    dimension: u32,
    active: Vec<u32>,
}

impl SparseVector {
    pub fn new(dimension: u32, mut indices: Vec<u32>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&max) = indices.last() {
            assert!(max < dimension, "index {max} out of dimension {dimension}");
        }
        SparseVector {
            dimension,
            active: indices,
        }
    }

    pub fn dimension(&self) -> u32 {
        self.dimension
    }

    pub fn active(&self) -> &[u32] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Size of the support intersection (both lists are sorted).
    pub fn intersection_count(&self, other: &SparseVector) -> usize {
        let (mut i, mut j, mut count) = (0, 0, 0);
        while i < self.active.len() && j < other.active.len() {
            match self.active[i].cmp(&other.active[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    count += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        count
    }
}

/// Cosine similarity between two multi-hot vectors: |a∩b| / sqrt(|a|·|b|).
/// Zero if either support is empty.
pub fn cosine(a: &SparseVector, b: &SparseVector) -> Result<f64, CandidateError> {
    if a.dimension != b.dimension {
        return Err(CandidateError::DimensionMismatch {
            left: a.dimension,
            right: b.dimension,
        });
    }
    Ok(cosine_from_counts(
        a.intersection_count(b),
        a.len(),
        b.len(),
    ))
}

/// Shared closed form so every similarity in the crate rounds identically.
pub fn cosine_from_counts(intersection: usize, len_a: usize, len_b: usize) -> f64 {
    if len_a == 0 || len_b == 0 {
        return 0.0;
    }
    intersection as f64 / ((len_a * len_b) as f64).sqrt()
}

/// Per-user multi-hot vectors over the item space, built from the train split.
#[derive(Debug, Clone)]
pub struct UserVectorIndex {
    item_dimension: u32,
    vectors: BTreeMap<UserId, SparseVector>,
}

impl UserVectorIndex {
    /// Dimension of the item space every user vector lives in.
    pub fn dimension(&self) -> u32 {
        self.item_dimension
    }

    pub fn vector(&self, user: UserId) -> Option<&SparseVector> {
        self.vectors.get(&user)
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.vectors.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Per-item multi-hot vectors over the user space, plus each item's full
/// neighbor ranking (cosine descending, item id ascending) so per-user
/// candidate generation is a cheap ranked walk.
#[derive(Debug, Clone)]
pub struct ItemVectorIndex {
    user_dimension: u32,
    vectors: BTreeMap<ItemId, SparseVector>,
    neighbors: BTreeMap<ItemId, Vec<(ItemId, f64)>>,
}

impl ItemVectorIndex {
    /// Dimension of the user space every item vector lives in.
    pub fn dimension(&self) -> u32 {
        self.user_dimension
    }

    pub fn vector(&self, item: ItemId) -> Option<&SparseVector> {
        self.vectors.get(&item)
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.vectors.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

pub fn build_user_vectors(split: &Split) -> UserVectorIndex {
    let item_dimension = split
        .train
        .values()
        .flat_map(|h| h.items.iter().copied())
        .max()
        .map_or(0, |m| m + 1);
    let vectors = split
        .train
        .iter()
        .map(|(&user, history)| {
            (
                user,
                SparseVector::new(item_dimension, history.items.clone()),
            )
        })
        .collect();
    UserVectorIndex {
        item_dimension,
        vectors,
    }
}

pub fn build_item_vectors(split: &Split) -> ItemVectorIndex {
    let user_dimension = split.train.keys().copied().max().map_or(0, |m| m + 1);
    let mut item_users: BTreeMap<ItemId, Vec<UserId>> = BTreeMap::new();
    for (&user, history) in &split.train {
        for &item in &history.items {
            item_users.entry(item).or_default().push(user);
        }
    }
    let vectors: BTreeMap<ItemId, SparseVector> = item_users
        .iter()
        .map(|(&item, users)| (item, SparseVector::new(user_dimension, users.clone())))
        .collect();

    // Co-occurrence accumulation: for each item, count shared users with
    // every other item via the user->items transposition, then rank all
    // other indexed items (zero-similarity items participate in the tail).
    let mut neighbors = BTreeMap::new();
    for (&item, vector) in &vectors {
        let mut co_counts: HashMap<ItemId, usize> = HashMap::new();
        for &user in vector.active() {
            if let Some(history) = split.train.get(&user) {
                for &other in &history.items {
                    if other != item {
                        *co_counts.entry(other).or_insert(0) += 1;
                    }
                }
            }
        }
        let mut ranked: Vec<(ItemId, f64)> = vectors
            .iter()
            .filter(|(&other, _)| other != item)
            .map(|(&other, other_vec)| {
                let inter = co_counts.get(&other).copied().unwrap_or(0);
                (
                    other,
                    cosine_from_counts(inter, vector.len(), other_vec.len()),
                )
            })
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        neighbors.insert(item, ranked);
    }

    ItemVectorIndex {
        user_dimension,
        vectors,
        neighbors,
    }
}

/// Which filtering principle produced a candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum FilterMethod {
    #[serde(rename = "uf")]
    #[value(name = "uf")]
    UserFiltering,
    #[serde(rename = "if")]
    #[value(name = "if")]
    ItemFiltering,
}

impl std::fmt::Display for FilterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FilterMethod::UserFiltering => write!(f, "uf"),
            FilterMethod::ItemFiltering => write!(f, "if"),
        }
    }
}

/// m similar users (UF), n similar movies per history item (IF), candidate
/// set size s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterParams {
    pub m: usize,
    pub n: usize,
    pub s: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        // m and n are exposed as configuration; s = 19 is the sweet spot of
        // the candidate-size sweep.
        FilterParams {
            m: 10,
            n: 10,
            s: 19,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.m == 0 || self.n == 0 || self.s == 0 {
            return Err("filter params m, n, s must all be >= 1".to_string());
        }
        Ok(())
    }
}

/// Ranking provenance for one candidate: how many sources nominated it and
/// the summed similarity of those sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub popularity: u32,
    pub similarity_mass: f64,
}

/// Ordered per-user candidate set. `exhausted` flags pools smaller than the
/// requested s. Candidates never include the user's own train items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user_id: UserId,
    pub method: FilterMethod,
    pub params: FilterParams,
    pub items: Vec<ItemId>,
    pub scores: Vec<CandidateScore>,
    pub exhausted: bool,
}

impl CandidateSet {
    pub fn contains(&self, item: ItemId) -> bool {
        self.items.contains(&item)
    }
}

/// Pools the train items of the target's top-m cosine-similar users and
/// keeps the s most popular, excluding everything the target already watched.
pub fn user_filter_candidates(
    target: UserId,
    index: &UserVectorIndex,
    params: &FilterParams,
) -> Result<CandidateSet, CandidateError> {
    let target_vec = index
        .vector(target)
        .ok_or(CandidateError::UnknownUser(target))?;
    let watched: HashSet<ItemId> = target_vec.active().iter().copied().collect();

    let mut sims: Vec<(UserId, f64)> = Vec::with_capacity(index.len().saturating_sub(1));
    for (&user, vector) in &index.vectors {
        if user == target {
            continue;
        }
        let sim = cosine_from_counts(
            target_vec.intersection_count(vector),
            target_vec.len(),
            vector.len(),
        );
        sims.push((user, sim));
    }
    sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sims.truncate(params.m);

    // Accumulate in rank order so similarity masses are reproducible.
    let mut pool: BTreeMap<ItemId, (u32, f64)> = BTreeMap::new();
    for &(user, sim) in &sims {
        for &item in index.vectors[&user].active() {
            if watched.contains(&item) {
                continue;
            }
            let entry = pool.entry(item).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += sim;
        }
    }

    Ok(rank_pool(
        target,
        FilterMethod::UserFiltering,
        *params,
        pool,
    ))
}

/// For each distinct history item, nominates its top-n cosine neighbors
/// (watched items excluded) and keeps the s candidates nominated most often.
pub fn item_filter_candidates(
    history: &UserHistory,
    index: &ItemVectorIndex,
    params: &FilterParams,
) -> Result<CandidateSet, CandidateError> {
    if history.items.is_empty() {
        return Err(CandidateError::EmptyHistory);
    }
    let watched: BTreeSet<ItemId> = history.items.iter().copied().collect();

    // Ascending distinct history items keep mass accumulation canonical.
    let mut pool: BTreeMap<ItemId, (u32, f64)> = BTreeMap::new();
    for &h in &watched {
        let ranked = index
            .neighbors
            .get(&h)
            .ok_or(CandidateError::UnknownItem(h))?;
        let mut taken = 0;
        for &(candidate, sim) in ranked {
            if taken == params.n {
                break;
            }
            if watched.contains(&candidate) {
                continue;
            }
            let entry = pool.entry(candidate).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += sim;
            taken += 1;
        }
    }

    Ok(rank_pool(
        history.user_id,
        FilterMethod::ItemFiltering,
        *params,
        pool,
    ))
}

fn rank_pool(
    user_id: UserId,
    method: FilterMethod,
    params: FilterParams,
    pool: BTreeMap<ItemId, (u32, f64)>,
) -> CandidateSet {
    let mut ranked: Vec<(ItemId, u32, f64)> = pool
        .into_iter()
        .map(|(item, (count, mass))| (item, count, mass))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    let exhausted = ranked.len() < params.s;
    ranked.truncate(params.s);
    let (items, scores) = ranked
        .into_iter()
        .map(|(item, popularity, similarity_mass)| {
            (
                item,
                CandidateScore {
                    popularity,
                    similarity_mass,
                },
            )
        })
        .unzip();
    CandidateSet {
        user_id,
        method,
        params,
        items,
        scores,
        exhausted,
    }
}
