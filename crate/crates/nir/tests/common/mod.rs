//! Shared test support: an independent dense brute-force oracle for the
//! candidate filters, random instance generation, and a tiny synthetic
//! dataset in the raw MovieLens file formats.
//!
//! Each integration test target compiles this module separately and uses a
//! different slice of it.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nir::dataset::{ItemId, UserHistory, UserId};

/// Incidence for oracle computations: user -> set of train items.
pub type TrainMap = BTreeMap<UserId, BTreeSet<ItemId>>;

/// Dense brute-force oracle mirroring the specified ranking rules, built on
/// boolean incidence vectors instead of sparse index structures.
pub mod oracle {
    use super::*;

    pub struct OracleResult {
        pub items: Vec<ItemId>,
        pub scores: Vec<(u32, f64)>,
        pub exhausted: bool,
    }

    fn max_item(train: &TrainMap) -> usize {
        train
            .values()
            .flat_map(|s| s.iter().copied())
            .max()
            .unwrap_or(0) as usize
    }

    fn dense_user_vectors(train: &TrainMap) -> BTreeMap<UserId, Vec<bool>> {
        let dim = max_item(train) + 1;
        train
            .iter()
            .map(|(&u, items)| {
                let mut v = vec![false; dim];
                for &i in items {
                    v[i as usize] = true;
                }
                (u, v)
            })
            .collect()
    }

    fn dot(a: &[bool], b: &[bool]) -> usize {
        a.iter().zip(b).filter(|(&x, &y)| x && y).count()
    }

    fn support(a: &[bool]) -> usize {
        a.iter().filter(|&&x| x).count()
    }

    fn cosine(count: usize, na: usize, nb: usize) -> f64 {
        if na == 0 || nb == 0 {
            return 0.0;
        }
        count as f64 / ((na * nb) as f64).sqrt()
    }

    fn rank_pool(pool: BTreeMap<ItemId, (u32, f64)>, s: usize) -> OracleResult {
        let mut ranked: Vec<(ItemId, u32, f64)> = pool
            .into_iter()
            .map(|(item, (count, mass))| (item, count, mass))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then(b.2.partial_cmp(&a.2).expect("no NaN masses"))
                .then(a.0.cmp(&b.0))
        });
        let exhausted = ranked.len() < s;
        ranked.truncate(s);
        OracleResult {
            items: ranked.iter().map(|r| r.0).collect(),
            scores: ranked.iter().map(|r| (r.1, r.2)).collect(),
            exhausted,
        }
    }

    pub fn user_filter(train: &TrainMap, target: UserId, m: usize, s: usize) -> OracleResult {
        let vectors = dense_user_vectors(train);
        let target_vec = &vectors[&target];
        let target_support = support(target_vec);
        let mut sims: Vec<(UserId, f64)> = vectors
            .iter()
            .filter(|(&u, _)| u != target)
            .map(|(&u, v)| (u, cosine(dot(target_vec, v), target_support, support(v))))
            .collect();
        sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        sims.truncate(m);

        let mut pool: BTreeMap<ItemId, (u32, f64)> = BTreeMap::new();
        for &(user, sim) in &sims {
            for &item in &train[&user] {
                if train[&target].contains(&item) {
                    continue;
                }
                let entry = pool.entry(item).or_insert((0, 0.0));
                entry.0 += 1;
                entry.1 += sim;
            }
        }
        rank_pool(pool, s)
    }

    pub fn item_filter(train: &TrainMap, target: UserId, n: usize, s: usize) -> OracleResult {
        let users: Vec<UserId> = train.keys().copied().collect();
        // dense item vectors over users
        let mut item_vecs: BTreeMap<ItemId, Vec<bool>> = BTreeMap::new();
        for (idx, &u) in users.iter().enumerate() {
            for &item in &train[&u] {
                item_vecs
                    .entry(item)
                    .or_insert_with(|| vec![false; users.len()])[idx] = true;
            }
        }
        let history = &train[&target];

        let mut pool: BTreeMap<ItemId, (u32, f64)> = BTreeMap::new();
        for &h in history {
            let h_vec = &item_vecs[&h];
            let h_support = support(h_vec);
            let mut ranked: Vec<(ItemId, f64)> = item_vecs
                .iter()
                .filter(|(&j, _)| !history.contains(&j))
                .map(|(&j, v)| (j, cosine(dot(h_vec, v), h_support, support(v))))
                .collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            ranked.truncate(n);
            for (item, sim) in ranked {
                let entry = pool.entry(item).or_insert((0, 0.0));
                entry.0 += 1;
                entry.1 += sim;
            }
        }
        rank_pool(pool, s)
    }
}

/// Random small instance for oracle-equivalence checks.
pub struct RandomInstance {
    pub train: TrainMap,
    pub target: UserId,
    pub m: usize,
    pub n: usize,
    pub s: usize,
}

pub fn random_instance(seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_users = rng.random_range(2..=8usize);
    let n_items = rng.random_range(2..=10usize) as ItemId;
    let mut train: TrainMap = BTreeMap::new();
    for user in 1..=n_users as UserId {
        let mut items = BTreeSet::new();
        for item in 1..=n_items {
            if rng.random_bool(0.4) {
                items.insert(item);
            }
        }
        if items.is_empty() {
            items.insert(rng.random_range(1..=n_items));
        }
        train.insert(user, items);
    }
    let target = rng.random_range(1..=n_users as UserId);
    let m = rng.random_range(1..=n_users);
    let n = rng.random_range(1..=n_items as usize);
    let s = rng.random_range(1..=n_items as usize + 2);
    RandomInstance {
        train,
        target,
        m,
        n,
        s,
    }
}

/// Builds a `Split` whose train maps are exactly `train` (items in ascending
/// order), with no held-out ground truth.
pub fn split_from_train(train: &TrainMap) -> nir::dataset::Split {
    let train_histories: BTreeMap<UserId, UserHistory> = train
        .iter()
        .map(|(&user_id, items)| {
            (
                user_id,
                UserHistory {
                    user_id,
                    items: items.iter().copied().collect(),
                },
            )
        })
        .collect();
    nir::dataset::Split {
        train: train_histories,
        ground_truth: BTreeMap::new(),
        eligible_users: train.keys().copied().collect(),
    }
}

/// Path to the real MovieLens 100K directory; override with `NIR_DATA_DIR`.
pub fn ml100k_dir() -> PathBuf {
    if let Ok(dir) = std::env::var("NIR_DATA_DIR") {
        return PathBuf::from(dir);
    }
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k")
}

pub fn require_ml100k() -> PathBuf {
    let dir = ml100k_dir();
    assert!(
        dir.join("u.data").exists() && dir.join("u.item").exists(),
        "MovieLens 100K not found at {} — download ml-100k and place u.data/u.item there, \
         or point NIR_DATA_DIR at the directory (see README)",
        dir.display()
    );
    dir
}

/// Writes a deterministic 12-user / 30-item dataset in the raw MovieLens
/// formats (tab-separated u.data, Latin-1 pipe-separated u.item).
pub fn write_tiny_dataset(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let n_items: ItemId = 30;
    let mut rng = ChaCha8Rng::seed_from_u64(0xD0E5);

    let mut u_data = String::new();
    for user in 1..=12u32 {
        let len = rng.random_range(8..=14usize);
        let mut items = BTreeSet::new();
        // popularity skew: low item ids are picked more often
        while items.len() < len {
            let r: f64 = rng.random_range(0.0..1.0);
            let item = ((r * r * n_items as f64) as ItemId).min(n_items - 1) + 1;
            items.insert(item);
        }
        for (pos, item) in items.iter().enumerate() {
            let rating = rng.random_range(1..=5u8);
            u_data.push_str(&format!(
                "{user}\t{item}\t{rating}\t{}\n",
                1_000 + pos as i64
            ));
        }
    }
    std::fs::write(dir.join("u.data"), u_data).unwrap();

    let mut u_item: Vec<u8> = Vec::new();
    for item in 1..=n_items {
        let title = match item {
            7 => format!("Caf\u{e9} Stories ({})", 1970 + item),
            11 => format!("Rock, The ({})", 1970 + item),
            _ => format!("Synthetic Film {item} ({})", 1970 + item),
        };
        let latin1: Vec<u8> = title.chars().map(|c| c as u32 as u8).collect();
        u_item.extend_from_slice(format!("{item}|").as_bytes());
        u_item.extend_from_slice(&latin1);
        u_item.extend_from_slice(
            format!("|01-Jan-{}||http://example.invalid|0\n", 1970 + item).as_bytes(),
        );
    }
    std::fs::write(dir.join("u.item"), u_item).unwrap();
}
