//! MovieLens 100K ingestion: interaction parsing, catalog parsing, per-user
//! chronological histories, and the leave-one-out evaluation split.
//!
//! Raw files are read in the classic GroupLens layout: `u.data` is
//! tab-separated `user \t item \t rating \t timestamp`, `u.item` is
//! pipe-separated `item_id|title|...` and Latin-1 encoded.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::normalize_title;

pub type UserId = u32;
pub type ItemId = u32;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("line {line}: {reason}")]
    MalformedLine {
        line: usize,
        text: String,
        reason: String,
    },
    #[error("duplicate item id {item_id} (line {line})")]
    DuplicateItem { line: usize, item_id: ItemId },
    #[error("interaction references item {item_id} missing from the catalog")]
    UnknownItem { item_id: ItemId },
}

/// A single user-item interaction from `u.data`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub user_id: UserId,
    pub item_id: ItemId,
    pub rating: u8,
    pub timestamp: i64,
}

/// Item-id to title registry with a normalized-title lookup.
///
/// When several item ids share the same normalized title (the raw data
/// contains a handful of genuine duplicates), the lookup keeps the smallest
/// id so the mapping is order-independent.
#[derive(Debug, Clone)]
pub struct Catalog {
    entries: BTreeMap<ItemId, String>,
    normalized_index: HashMap<String, ItemId>,
}

impl Catalog {
    pub fn from_entries(entries: BTreeMap<ItemId, String>) -> Self {
        let mut normalized_index: HashMap<String, ItemId> = HashMap::new();
        for (&id, title) in &entries {
            normalized_index
                .entry(normalize_title(title))
                .and_modify(|existing| {
                    if id < *existing {
                        *existing = id;
                    }
                })
                .or_insert(id);
        }
        Catalog {
            entries,
            normalized_index,
        }
    }

    pub fn title(&self, id: ItemId) -> Option<&str> {
        self.entries.get(&id).map(String::as_str)
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.entries.contains_key(&id)
    }

    /// Looks up an already-normalized title.
    pub fn resolve_normalized(&self, normalized: &str) -> Option<ItemId> {
        self.normalized_index.get(normalized).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, &str)> {
        self.entries.iter().map(|(&id, t)| (id, t.as_str()))
    }
}

/// A user's interactions ordered by timestamp, ties broken by raw-file order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: UserId,
    pub items: Vec<ItemId>,
}

/// Leave-one-out split: each eligible user's last interaction is held out as
/// the ground truth; everything earlier stays observable.
///
/// Users below `min_history` are not evaluated but keep their full history in
/// `train` so they still inform similarity computations.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: BTreeMap<UserId, UserHistory>,
    pub ground_truth: BTreeMap<UserId, ItemId>,
    pub eligible_users: Vec<UserId>,
}

/// Parses `u.data`-format lines: four tab-separated integer fields per line.
pub fn parse_interactions<R: BufRead>(reader: R) -> Result<Vec<InteractionEvent>, DatasetError> {
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: "interaction stream".to_string(),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(DatasetError::MalformedLine {
                line: line_no,
                text: line.to_string(),
                reason: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let parse_u32 = |s: &str, what: &str| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| DatasetError::MalformedLine {
                    line: line_no,
                    text: line.to_string(),
                    reason: format!("{what} is not a valid integer: {s:?}"),
                })
        };
        let user_id = parse_u32(fields[0], "user id")?;
        let item_id = parse_u32(fields[1], "item id")?;
        let rating = parse_u32(fields[2], "rating")?;
        let timestamp =
            fields[3]
                .trim()
                .parse::<i64>()
                .map_err(|_| DatasetError::MalformedLine {
                    line: line_no,
                    text: line.to_string(),
                    reason: format!("timestamp is not a valid integer: {:?}", fields[3]),
                })?;
        if user_id == 0 || item_id == 0 {
            return Err(DatasetError::MalformedLine {
                line: line_no,
                text: line.to_string(),
                reason: "user and item ids must be >= 1".to_string(),
            });
        }
        if !(1..=5).contains(&rating) {
            return Err(DatasetError::MalformedLine {
                line: line_no,
                text: line.to_string(),
                reason: format!("rating {rating} outside 1..=5"),
            });
        }
        events.push(InteractionEvent {
            user_id,
            item_id,
            rating: rating as u8,
            timestamp,
        });
    }
    if events.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    Ok(events)
}

/// Parses `u.item`-format bytes (Latin-1): `item_id|title|...` per line.
pub fn parse_catalog<R: Read>(mut reader: R) -> Result<Catalog, DatasetError> {
    let mut raw = Vec::new();
    reader
        .read_to_end(&mut raw)
        .map_err(|source| DatasetError::Io {
            path: "catalog stream".to_string(),
            source,
        })?;
    // Latin-1 maps each byte to the identical Unicode code point.
    let text: String = raw.iter().map(|&b| b as char).collect();

    let mut entries = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '|');
        let id_field = parts.next().unwrap_or("");
        let title = parts.next().ok_or_else(|| DatasetError::MalformedLine {
            line: line_no,
            text: line.to_string(),
            reason: "expected `item_id|title|...`".to_string(),
        })?;
        let item_id = id_field
            .trim()
            .parse::<u32>()
            .map_err(|_| DatasetError::MalformedLine {
                line: line_no,
                text: line.to_string(),
                reason: format!("item id is not a valid integer: {id_field:?}"),
            })?;
        if entries.insert(item_id, title.to_string()).is_some() {
            return Err(DatasetError::DuplicateItem {
                line: line_no,
                item_id,
            });
        }
    }
    if entries.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    Ok(Catalog::from_entries(entries))
}

/// Groups events per user, sorted by timestamp; equal timestamps keep the
/// raw-file order (stable sort over the input sequence).
pub fn build_histories(events: &[InteractionEvent]) -> BTreeMap<UserId, UserHistory> {
    let mut per_user: BTreeMap<UserId, Vec<(i64, ItemId)>> = BTreeMap::new();
    for ev in events {
        per_user
            .entry(ev.user_id)
            .or_default()
            .push((ev.timestamp, ev.item_id));
    }
    per_user
        .into_iter()
        .map(|(user_id, mut items)| {
            items.sort_by_key(|&(ts, _)| ts);
            (
                user_id,
                UserHistory {
                    user_id,
                    items: items.into_iter().map(|(_, item)| item).collect(),
                },
            )
        })
        .collect()
}

/// Holds out each eligible user's last interaction as ground truth.
pub fn split_leave_one_out(histories: &BTreeMap<UserId, UserHistory>, min_history: usize) -> Split {
    assert!(min_history >= 2, "min_history must be at least 2");
    let mut train = BTreeMap::new();
    let mut ground_truth = BTreeMap::new();
    let mut eligible_users = Vec::new();
    for (&user_id, history) in histories {
        if history.items.len() >= min_history {
            let mut items = history.items.clone();
            let gt = items.pop().expect("history is non-empty");
            train.insert(user_id, UserHistory { user_id, items });
            ground_truth.insert(user_id, gt);
            eligible_users.push(user_id);
        } else {
            train.insert(user_id, history.clone());
        }
    }
    Split {
        train,
        ground_truth,
        eligible_users,
    }
}

/// A loaded dataset directory: catalog plus full per-user histories.
#[derive(Debug, Clone)]
pub struct MovieLens {
    pub catalog: Catalog,
    pub histories: BTreeMap<UserId, UserHistory>,
    pub event_count: usize,
}

impl MovieLens {
    /// Reads `u.data` and `u.item` from `dir` and validates that every
    /// interacted item exists in the catalog.
    pub fn load_dir(dir: &Path) -> Result<Self, DatasetError> {
        let data_path = dir.join("u.data");
        let item_path = dir.join("u.item");
        let data = File::open(&data_path).map_err(|source| DatasetError::Io {
            path: data_path.display().to_string(),
            source,
        })?;
        let events = parse_interactions(BufReader::new(data))?;
        let items = File::open(&item_path).map_err(|source| DatasetError::Io {
            path: item_path.display().to_string(),
            source,
        })?;
        let catalog = parse_catalog(BufReader::new(items))?;
        for ev in &events {
            if !catalog.contains(ev.item_id) {
                return Err(DatasetError::UnknownItem {
                    item_id: ev.item_id,
                });
            }
        }
        let event_count = events.len();
        let histories = build_histories(&events);
        Ok(MovieLens {
            catalog,
            histories,
            event_count,
        })
    }

    pub fn user_count(&self) -> usize {
        self.histories.len()
    }

    pub fn item_count(&self) -> usize {
        self.catalog.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn ev(u: u32, i: u32, r: u8, t: i64) -> InteractionEvent {
        InteractionEvent {
            user_id: u,
            item_id: i,
            rating: r,
            timestamp: t,
        }
    }

    #[test]
    fn parses_documented_line() {
        let events = parse_interactions(Cursor::new("196\t242\t3\t881250949")).unwrap();
        assert_eq!(events, vec![ev(196, 242, 3, 881250949)]);
    }

    #[test]
    fn parses_minimal_values() {
        let events = parse_interactions(Cursor::new("1\t1\t5\t0")).unwrap();
        assert_eq!(events, vec![ev(1, 1, 5, 0)]);
    }

    #[test]
    fn rejects_wrong_field_count_with_line_number() {
        let err = parse_interactions(Cursor::new("196\t242\t3")).unwrap_err();
        assert_eq!(err.to_string(), "line 1: expected 4 fields, got 3");
        let err = parse_interactions(Cursor::new("1\t2\t3\t4\n196\t242\t3")).unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
    }

    #[test]
    fn rejects_empty_input() {
        assert!(matches!(
            parse_interactions(Cursor::new("")),
            Err(DatasetError::EmptyInput)
        ));
    }

    #[test]
    fn rejects_bad_rating() {
        let err = parse_interactions(Cursor::new("1\t1\t6\t0")).unwrap_err();
        assert!(err.to_string().contains("rating 6"), "{err}");
    }

    #[test]
    fn parse_is_pure() {
        let text = "196\t242\t3\t881250949\n1\t1\t5\t0\n";
        let a = parse_interactions(Cursor::new(text)).unwrap();
        let b = parse_interactions(Cursor::new(text)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn catalog_maps_id_to_title() {
        let catalog = parse_catalog(Cursor::new(
            "1|Toy Story (1995)|01-Jan-1995||http://example|0|0\n2|GoldenEye (1995)|01-Jan-1995||x|0",
        ))
        .unwrap();
        assert_eq!(catalog.title(1), Some("Toy Story (1995)"));
        assert_eq!(catalog.title(2), Some("GoldenEye (1995)"));
        assert_eq!(catalog.len(), 2);
        assert_eq!(catalog.resolve_normalized("toy story"), Some(1));
    }

    #[test]
    fn catalog_rejects_duplicate_id() {
        let err = parse_catalog(Cursor::new("7|A (1990)|x\n7|B (1991)|x")).unwrap_err();
        assert!(matches!(
            err,
            DatasetError::DuplicateItem { item_id: 7, .. }
        ));
    }

    #[test]
    fn catalog_rejects_non_integer_id() {
        let err = parse_catalog(Cursor::new("x|A|y")).unwrap_err();
        assert!(err.to_string().contains("not a valid integer"), "{err}");
    }

    #[test]
    fn catalog_decodes_latin1() {
        // "Misérables, Les (1995)" with the Latin-1 byte 0xe9 for é.
        let bytes = b"1|Mis\xe9rables, Les (1995)|01-Jan-1995|x".to_vec();
        let catalog = parse_catalog(Cursor::new(bytes)).unwrap();
        assert_eq!(catalog.title(1), Some("Misérables, Les (1995)"));
    }

    #[test]
    fn duplicate_normalized_titles_keep_smallest_id() {
        let catalog = parse_catalog(Cursor::new(
            "9|Chasing Amy (1997)|x\n3|Chasing Amy (1997)|x",
        ))
        .unwrap();
        assert_eq!(catalog.resolve_normalized("chasing amy"), Some(3));
    }

    #[test]
    fn histories_sorted_by_timestamp() {
        let events = vec![ev(1, 20, 3, 2), ev(1, 10, 3, 1)];
        let histories = build_histories(&events);
        assert_eq!(histories[&1].items, vec![10, 20]);
    }

    #[test]
    fn history_ties_keep_input_order() {
        let events = vec![ev(1, 10, 3, 1), ev(1, 20, 3, 1)];
        let histories = build_histories(&events);
        assert_eq!(histories[&1].items, vec![10, 20]);
    }

    #[test]
    fn split_holds_out_last_item() {
        let events = vec![ev(1, 10, 3, 1), ev(1, 20, 3, 2), ev(1, 30, 3, 3)];
        let split = split_leave_one_out(&build_histories(&events), 2);
        assert_eq!(split.train[&1].items, vec![10, 20]);
        assert_eq!(split.ground_truth[&1], 30);
        assert_eq!(split.eligible_users, vec![1]);
    }

    #[test]
    fn split_excludes_short_histories() {
        let events = vec![ev(1, 10, 3, 1), ev(2, 10, 3, 1), ev(2, 20, 3, 2)];
        let split = split_leave_one_out(&build_histories(&events), 2);
        assert_eq!(split.eligible_users, vec![2]);
        assert!(!split.ground_truth.contains_key(&1));
        // ineligible users keep their full history as context
        assert_eq!(split.train[&1].items, vec![10]);
    }

    #[test]
    fn split_round_trips_to_full_history() {
        let events = vec![
            ev(1, 10, 3, 1),
            ev(1, 20, 3, 2),
            ev(2, 30, 4, 5),
            ev(2, 40, 4, 6),
            ev(2, 50, 4, 7),
        ];
        let histories = build_histories(&events);
        let split = split_leave_one_out(&histories, 2);
        for &u in &split.eligible_users {
            let mut rebuilt = split.train[&u].items.clone();
            rebuilt.push(split.ground_truth[&u]);
            assert_eq!(rebuilt, histories[&u].items);
        }
    }
}
