//! Prompt rendering: the simple prompt, the single combined prompt, and the
//! step-by-step chain that threads each answer into the next prompt.
//!
//! Wording lives in `templates/*.txt` (placeholder syntax `{name}`), so exact
//! phrasing is data. The built-in set is embedded at compile time; a
//! directory of the same file names can override it.

use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::UserId;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("failed to read template {name}: {source}")]
    TemplateIo {
        name: String,
        source: std::io::Error,
    },
    #[error("template {template} left placeholder {{{placeholder}}} unbound")]
    UnboundPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("watched list is empty")]
    EmptyWatched,
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("chain step {step} requires the answer to step {missing}")]
    MissingAnswer { step: usize, missing: usize },
    #[error("invalid chain plan: {0}")]
    InvalidPlan(String),
}

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{([a-z0-9_]+)\}").expect("static regex"));

const TEMPLATE_NAMES: [&str; 7] = [
    "simple",
    "candidate_block",
    "watched_block",
    "step_preference",
    "step_representative",
    "step_recommend",
    "answer_prefix",
];

/// The seven wording fragments every prompt is assembled from.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    simple: String,
    candidate_block: String,
    watched_block: String,
    step_preference: String,
    step_representative: String,
    step_recommend: String,
    answer_prefix: String,
}

impl TemplateSet {
    /// The wording shipped with the crate.
    pub fn builtin() -> Self {
        TemplateSet {
            simple: include_str!("../templates/simple.txt")
                .trim_end()
                .to_string(),
            candidate_block: include_str!("../templates/candidate_block.txt")
                .trim_end()
                .to_string(),
            watched_block: include_str!("../templates/watched_block.txt")
                .trim_end()
                .to_string(),
            step_preference: include_str!("../templates/step_preference.txt")
                .trim_end()
                .to_string(),
            step_representative: include_str!("../templates/step_representative.txt")
                .trim_end()
                .to_string(),
            step_recommend: include_str!("../templates/step_recommend.txt")
                .trim_end()
                .to_string(),
            answer_prefix: include_str!("../templates/answer_prefix.txt")
                .trim_end()
                .to_string(),
        }
    }

    /// Loads `<name>.txt` for every fragment from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| -> Result<String, PromptError> {
            std::fs::read_to_string(dir.join(format!("{name}.txt")))
                .map(|s| s.trim_end().to_string())
                .map_err(|source| PromptError::TemplateIo {
                    name: name.to_string(),
                    source,
                })
        };
        Ok(TemplateSet {
            simple: read("simple")?,
            candidate_block: read("candidate_block")?,
            watched_block: read("watched_block")?,
            step_preference: read("step_preference")?,
            step_representative: read("step_representative")?,
            step_recommend: read("step_recommend")?,
            answer_prefix: read("answer_prefix")?,
        })
    }

    fn fragment(&self, name: &str) -> &str {
        match name {
            "simple" => &self.simple,
            "candidate_block" => &self.candidate_block,
            "watched_block" => &self.watched_block,
            "step_preference" => &self.step_preference,
            "step_representative" => &self.step_representative,
            "step_recommend" => &self.step_recommend,
            "answer_prefix" => &self.answer_prefix,
            _ => unreachable!("unknown template name {name}"),
        }
    }

    /// Digest over every fragment, so runs can pin the exact wording.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for name in TEMPLATE_NAMES {
            let body = self.fragment(name);
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            hasher.update((body.len() as u64).to_le_bytes());
            hasher.update(body.as_bytes());
        }
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn fill(template_name: &str, body: &str, bindings: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = body.to_string();
    for (key, value) in bindings {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    if let Some(caps) = PLACEHOLDER.captures(&out) {
        return Err(PromptError::UnboundPlaceholder {
            template: template_name.to_string(),
            placeholder: caps[1].to_string(),
        });
    }
    Ok(out)
}

/// Titles joined the way they appear inside prompt blocks.
pub fn join_titles(titles: &[String]) -> String {
    titles.join(", ")
}

/// The subtask a chain turn performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainStep {
    /// Summarize the user's preferences.
    Preference,
    /// Select representative watched movies in descending preference order.
    Representative,
    /// Recommend k candidates in the arrow output format.
    Recommend,
}

/// An ordered, validated list of chain steps ending in `Recommend`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainPlan {
    steps: Vec<ChainStep>,
}

impl ChainPlan {
    pub fn new(steps: Vec<ChainStep>) -> Result<Self, PromptError> {
        if steps.is_empty() {
            return Err(PromptError::InvalidPlan("plan is empty".to_string()));
        }
        if steps.last() != Some(&ChainStep::Recommend) {
            return Err(PromptError::InvalidPlan(
                "plan must end with the recommendation step".to_string(),
            ));
        }
        if steps[..steps.len() - 1].contains(&ChainStep::Recommend) {
            return Err(PromptError::InvalidPlan(
                "recommendation must be the final step".to_string(),
            ));
        }
        for step in [ChainStep::Preference, ChainStep::Representative] {
            if steps.iter().filter(|&&s| s == step).count() > 1 {
                return Err(PromptError::InvalidPlan(format!(
                    "step {step:?} appears more than once"
                )));
            }
        }
        Ok(ChainPlan { steps })
    }

    /// The full three-step chain.
    pub fn full() -> Self {
        ChainPlan {
            steps: vec![
                ChainStep::Preference,
                ChainStep::Representative,
                ChainStep::Recommend,
            ],
        }
    }

    /// Plan for an ablation row: optional intermediate steps, recommendation
    /// always last.
    pub fn from_toggles(use_preference: bool, use_representative: bool) -> Self {
        let mut steps = Vec::new();
        if use_preference {
            steps.push(ChainStep::Preference);
        }
        if use_representative {
            steps.push(ChainStep::Representative);
        }
        steps.push(ChainStep::Recommend);
        ChainPlan { steps }
    }

    pub fn steps(&self) -> &[ChainStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl fmt::Display for ChainPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .steps
            .iter()
            .map(|s| match s {
                ChainStep::Preference => "preference",
                ChainStep::Representative => "representative",
                ChainStep::Recommend => "recommend",
            })
            .collect();
        write!(f, "{}", names.join("+"))
    }
}

/// One prompt/answer turn of a chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainTurn {
    pub step: ChainStep,
    pub prompt: String,
    pub answer: Option<String>,
}

/// Per-user chain state: the title lists feeding the blocks plus the turns
/// produced so far. Later prompts embed earlier prompts and answers verbatim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptChainState {
    pub user_id: UserId,
    pub candidate_titles: Vec<String>,
    pub watched_titles: Vec<String>,
    pub k: usize,
    pub turns: Vec<ChainTurn>,
}

impl PromptChainState {
    pub fn new(
        user_id: UserId,
        candidate_titles: Vec<String>,
        watched_titles: Vec<String>,
        k: usize,
    ) -> Result<Self, PromptError> {
        if watched_titles.is_empty() {
            return Err(PromptError::EmptyWatched);
        }
        if candidate_titles.is_empty() {
            return Err(PromptError::EmptyCandidates);
        }
        Ok(PromptChainState {
            user_id,
            candidate_titles,
            watched_titles,
            k,
            turns: Vec::new(),
        })
    }

    pub fn answer(&self, index: usize) -> Option<&str> {
        self.turns.get(index).and_then(|t| t.answer.as_deref())
    }
}

fn instruction(templates: &TemplateSet, step: ChainStep, k: usize) -> Result<String, PromptError> {
    let k_str = k.to_string();
    match step {
        ChainStep::Preference => fill("step_preference", &templates.step_preference, &[]),
        ChainStep::Representative => {
            fill("step_representative", &templates.step_representative, &[])
        }
        ChainStep::Recommend => fill(
            "step_recommend",
            &templates.step_recommend,
            &[("k", k_str.as_str())],
        ),
    }
}

fn header_blocks(
    templates: &TemplateSet,
    candidate_titles: &[String],
    watched_titles: &[String],
) -> Result<String, PromptError> {
    if candidate_titles.is_empty() {
        return Err(PromptError::EmptyCandidates);
    }
    if watched_titles.is_empty() {
        return Err(PromptError::EmptyWatched);
    }
    let candidates = join_titles(candidate_titles);
    let watched = join_titles(watched_titles);
    let cand_block = fill(
        "candidate_block",
        &templates.candidate_block,
        &[("candidates", candidates.as_str())],
    )?;
    let watched_block = fill(
        "watched_block",
        &templates.watched_block,
        &[("watched", watched.as_str())],
    )?;
    Ok(format!("{cand_block}\n{watched_block}\n"))
}

/// The candidate-free prompt: watched titles inline, then the question.
pub fn render_simple(
    templates: &TemplateSet,
    watched_titles: &[String],
    k: usize,
) -> Result<String, PromptError> {
    if watched_titles.is_empty() {
        return Err(PromptError::EmptyWatched);
    }
    let watched = join_titles(watched_titles);
    let k_str = k.to_string();
    let body = fill(
        "simple",
        &templates.simple,
        &[("watched", watched.as_str()), ("k", k_str.as_str())],
    )?;
    Ok(format!("{body}\n{}", templates.answer_prefix))
}

/// The simple prompt with the candidate block prepended (the "candidate set
/// only" ablation row).
pub fn render_simple_with_candidates(
    templates: &TemplateSet,
    candidate_titles: &[String],
    watched_titles: &[String],
    k: usize,
) -> Result<String, PromptError> {
    if candidate_titles.is_empty() {
        return Err(PromptError::EmptyCandidates);
    }
    if watched_titles.is_empty() {
        return Err(PromptError::EmptyWatched);
    }
    let candidates = join_titles(candidate_titles);
    let cand_block = fill(
        "candidate_block",
        &templates.candidate_block,
        &[("candidates", candidates.as_str())],
    )?;
    let watched = join_titles(watched_titles);
    let k_str = k.to_string();
    let body = fill(
        "simple",
        &templates.simple,
        &[("watched", watched.as_str()), ("k", k_str.as_str())],
    )?;
    Ok(format!("{cand_block}\n{body}\n{}", templates.answer_prefix))
}

/// All step instructions in one prompt, no intermediate answers.
pub fn render_single(
    templates: &TemplateSet,
    candidate_titles: &[String],
    watched_titles: &[String],
    k: usize,
) -> Result<String, PromptError> {
    let mut prompt = header_blocks(templates, candidate_titles, watched_titles)?;
    for step in ChainPlan::full().steps() {
        prompt.push_str(&instruction(templates, *step, k)?);
        prompt.push('\n');
    }
    prompt.push_str(&templates.answer_prefix);
    Ok(prompt)
}

/// Renders the prompt for `plan.steps()[index]` given the state so far.
/// Prompts after the first are the previous prompt plus its answer plus the
/// next instruction, so every earlier answer appears verbatim.
pub fn render_chain_step(
    templates: &TemplateSet,
    plan: &ChainPlan,
    state: &PromptChainState,
    index: usize,
) -> Result<String, PromptError> {
    assert!(index < plan.len(), "step index {index} out of plan");
    let base = if index == 0 {
        header_blocks(templates, &state.candidate_titles, &state.watched_titles)?
    } else {
        let prev = state
            .turns
            .get(index - 1)
            .ok_or(PromptError::MissingAnswer {
                step: index + 1,
                missing: index,
            })?;
        let answer = prev.answer.as_deref().ok_or(PromptError::MissingAnswer {
            step: index + 1,
            missing: index,
        })?;
        format!("{} {answer}\n", prev.prompt)
    };
    let step = plan.steps()[index];
    Ok(format!(
        "{base}{}\n{}",
        instruction(templates, step, state.k)?,
        templates.answer_prefix
    ))
}
