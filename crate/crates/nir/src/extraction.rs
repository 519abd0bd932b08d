//! Turns free-text model answers into ranked catalog items.
//!
//! The primary grammar picks the candidate between the `<-` / `->` markers
//! the recommendation prompt asks for; when no arrow lines are present at
//! all, a numbered-list fallback applies. Extracted strings resolve against
//! the run's candidate set (or the whole catalog for candidate-free runs) by
//! exact normalized match first, then token-set Jaccard overlap.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::dataset::{Catalog, ItemId};

/// Default acceptance threshold for fuzzy title matches.
pub const DEFAULT_JACCARD_THRESHOLD: f64 = 0.6;

static YEAR_SUFFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\s*\(\d{4}\)\s*$").expect("static regex"));
static ARTICLE_SUFFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(.*),\s*(the|a|an)\s*$").expect("static regex"));
static NUMBERED_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*\d+\s*[.)]\s*(.+)$").expect("static regex"));

/// Canonical form used for title matching: year suffix stripped, the
/// MovieLens ", The/A/An" article suffix moved to the front, lowercased,
/// punctuation collapsed to spaces.
pub fn normalize_title(title: &str) -> String {
    let trimmed = title.trim();
    let no_year = YEAR_SUFFIX.replace(trimmed, "");
    let rearticled = match ARTICLE_SUFFIX.captures(no_year.trim()) {
        Some(caps) => format!("{} {}", &caps[2], &caps[1]),
        None => no_year.trim().to_string(),
    };
    let spaced: String = rearticled
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    spaced.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn token_set(normalized: &str) -> BTreeSet<String> {
    normalized.split_whitespace().map(str::to_string).collect()
}

/// One parsed recommendation line from the model's answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecommendationLine {
    /// 1-based position among the parsed lines.
    pub position: usize,
    pub watched_part: String,
    pub candidate_part: String,
}

/// Parses answer text into recommendation lines.
///
/// Lines containing `<- ... ->` win; if no line in the whole answer carries
/// the arrow markers, numbered-list lines (`N. Title` / `N) Title`) are used
/// instead. An empty result is a legal outcome.
pub fn parse_lines(answer_text: &str) -> Vec<RawRecommendationLine> {
    let mut arrow_lines = Vec::new();
    for line in answer_text.lines() {
        if let Some(start) = line.find("<-") {
            if let Some(rel_end) = line[start + 2..].find("->") {
                let candidate = line[start + 2..start + 2 + rel_end].trim();
                if !candidate.is_empty() {
                    let watched = line[..start].trim().trim_end_matches(':').trim_end();
                    arrow_lines.push(RawRecommendationLine {
                        position: arrow_lines.len() + 1,
                        watched_part: watched.to_string(),
                        candidate_part: candidate.to_string(),
                    });
                }
            }
        }
    }
    if !arrow_lines.is_empty() {
        return arrow_lines;
    }

    let mut numbered = Vec::new();
    for line in answer_text.lines() {
        if let Some(caps) = NUMBERED_LINE.captures(line) {
            let candidate = caps[1].trim();
            if !candidate.is_empty() {
                numbered.push(RawRecommendationLine {
                    position: numbered.len() + 1,
                    watched_part: String::new(),
                    candidate_part: candidate.to_string(),
                });
            }
        }
    }
    numbered
}

#[derive(Debug, Clone)]
struct ScopeEntry {
    item_id: ItemId,
    title: String,
    normalized: String,
    tokens: BTreeSet<String>,
}

/// The set of titles a raw string may resolve to, with precomputed
/// normalized forms. Built from a candidate set for candidate-restricted
/// runs, or from the whole catalog for simple-prompt runs.
#[derive(Debug, Clone)]
pub struct ResolutionScope {
    entries: Vec<ScopeEntry>,
    exact: HashMap<String, ItemId>,
}

impl ResolutionScope {
    pub fn from_pairs<I: IntoIterator<Item = (ItemId, String)>>(pairs: I) -> Self {
        let mut entries: Vec<ScopeEntry> = pairs
            .into_iter()
            .map(|(item_id, title)| {
                let normalized = normalize_title(&title);
                let tokens = token_set(&normalized);
                ScopeEntry {
                    item_id,
                    title,
                    normalized,
                    tokens,
                }
            })
            .collect();
        entries.sort_by_key(|e| e.item_id);
        let mut exact: HashMap<String, ItemId> = HashMap::new();
        for entry in &entries {
            exact
                .entry(entry.normalized.clone())
                .and_modify(|existing| {
                    if entry.item_id < *existing {
                        *existing = entry.item_id;
                    }
                })
                .or_insert(entry.item_id);
        }
        ResolutionScope { entries, exact }
    }

    pub fn from_catalog(catalog: &Catalog) -> Self {
        Self::from_pairs(catalog.iter().map(|(id, t)| (id, t.to_string())))
    }

    /// Restricts resolution to the candidate set; titles come from the catalog.
    pub fn from_candidates(candidates: &CandidateSet, catalog: &Catalog) -> Self {
        Self::from_pairs(candidates.items.iter().map(|&id| {
            let title = catalog.title(id).unwrap_or_default().to_string();
            (id, title)
        }))
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.entries.iter().any(|e| e.item_id == id)
    }

    pub fn title(&self, id: ItemId) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.item_id == id)
            .map(|e| e.title.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Exact normalized match, then unique best Jaccard overlap at or above
    /// `threshold`. Fraction comparisons use integer cross-multiplication so
    /// ties are detected exactly.
    fn resolve_one(&self, raw: &str, threshold: f64) -> Option<ItemId> {
        let normalized = normalize_title(raw);
        if normalized.is_empty() {
            return None;
        }
        if let Some(&id) = self.exact.get(&normalized) {
            return Some(id);
        }
        let tokens = token_set(&normalized);
        let mut best: Option<(usize, usize, ItemId)> = None; // (inter, union, id)
        let mut best_count = 0usize;
        for entry in &self.entries {
            let inter = tokens.intersection(&entry.tokens).count();
            let union = tokens.union(&entry.tokens).count();
            if union == 0 {
                continue;
            }
            match best {
                None => {
                    best = Some((inter, union, entry.item_id));
                    best_count = 1;
                }
                Some((bi, bu, _)) => {
                    let lhs = inter as u64 * bu as u64;
                    let rhs = bi as u64 * union as u64;
                    if lhs > rhs {
                        best = Some((inter, union, entry.item_id));
                        best_count = 1;
                    } else if lhs == rhs {
                        best_count += 1;
                    }
                }
            }
        }
        let (inter, union, id) = best?;
        if best_count == 1 && inter as f64 / union as f64 >= threshold {
            Some(id)
        } else {
            None
        }
    }
}

/// Ranked items recovered from one answer, in text order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedRanking {
    pub items: Vec<ItemId>,
    pub unresolved: Vec<String>,
}

/// Resolves parsed lines against the scope: duplicates keep the first
/// occurrence, the ranking is truncated to `k`, and strings that fail
/// resolution are reported.
pub fn resolve(
    lines: &[RawRecommendationLine],
    scope: &ResolutionScope,
    k: usize,
    threshold: f64,
) -> ExtractedRanking {
    let mut items = Vec::new();
    let mut unresolved = Vec::new();
    let mut seen: HashSet<ItemId> = HashSet::new();
    for line in lines {
        match scope.resolve_one(&line.candidate_part, threshold) {
            Some(id) => {
                if seen.insert(id) {
                    items.push(id);
                }
            }
            None => unresolved.push(line.candidate_part.clone()),
        }
    }
    items.truncate(k);
    ExtractedRanking { items, unresolved }
}
