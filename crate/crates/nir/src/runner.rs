//! End-to-end orchestration: ingest → split → candidates → prompts → model →
//! extraction → metrics, plus the ablation and candidate-size sweep
//! harnesses. Per-user pipelines run in parallel up to the configured
//! concurrency; artifacts land in the run's output directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{
    build_item_vectors, build_user_vectors, item_filter_candidates, user_filter_candidates,
    CandidateError, CandidateSet, ItemVectorIndex, UserVectorIndex,
};
use crate::config::{AblationToggles, BackendKind, ConfigError, RunConfig, Strategy, UserSample};
use crate::dataset::{DatasetError, ItemId, MovieLens, Split, UserId};
use crate::evaluation::{
    aggregate, cs_random_ranking, derive_user_seed, hit_at_k, ndcg_at_k, rank_of_gt, EvalError,
    EvalRecord,
};
use crate::extraction::{parse_lines, resolve, ResolutionScope};
use crate::gateway::{
    cache_key, CompletionRequest, Gateway, HttpBackend, PromptContext, ResponseCache, RetryPolicy,
    StubBackend,
};
use crate::prompting::{
    render_chain_step, render_simple, render_simple_with_candidates, render_single, ChainPlan,
    ChainTurn, PromptChainState, PromptError, TemplateSet,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Candidate(#[from] CandidateError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("no eligible users after the split")]
    NoEligibleUsers,
    #[error("candidates file mismatch: {0}")]
    CandidateFileMismatch(String),
    #[error("no stored candidate set for user {0}")]
    MissingCandidates(UserId),
    #[error("{failed} of {total} users failed (over the 20% run-level limit)")]
    TooManyFailures { failed: usize, total: usize },
    #[error("the ablation harness requires strategy nir-multi with the uf filter")]
    AblationRequiresMultiUf,
}

/// Per-user failure; the run continues and reports these in the summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserFailure {
    pub user_id: UserId,
    pub stage: String,
    pub message: String,
}

/// Prompts and answers for one user, written when transcripts are enabled.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transcript {
    pub user_id: UserId,
    pub prompts: Vec<String>,
    pub answers: Vec<String>,
}

/// The `summary.json` payload: aggregate metrics plus the full configuration
/// echo so any two summaries are comparable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: String,
    pub k: usize,
    pub user_count: usize,
    pub failed_user_count: usize,
    pub failed_users: Vec<UserId>,
    pub hr_at_k: f64,
    pub ndcg_at_k: f64,
    pub candidate_coverage: Option<f64>,
    pub exhausted_candidate_sets: usize,
    pub template_digest: Option<String>,
    pub config: RunConfig,
}

/// Everything a run produced, including in-memory copies of the artifacts.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<UserFailure>,
    pub cache_hits: u64,
    pub backend_calls: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub s: usize,
    pub hr_at_k: f64,
    pub ndcg_at_k: f64,
    pub coverage: Option<f64>,
}

#[derive(Debug)]
pub struct AblationRow {
    pub label: String,
    pub toggles: AblationToggles,
    pub summary: RunSummary,
}

enum CandidateProvider {
    None,
    UserFiltering(UserVectorIndex),
    ItemFiltering(ItemVectorIndex),
    Loaded(BTreeMap<UserId, CandidateSet>),
}

impl CandidateProvider {
    fn for_user(
        &self,
        user: UserId,
        split: &Split,
        config: &RunConfig,
    ) -> Result<Option<CandidateSet>, String> {
        match self {
            CandidateProvider::None => Ok(None),
            CandidateProvider::UserFiltering(index) => {
                user_filter_candidates(user, index, &config.filter_params())
                    .map(Some)
                    .map_err(|e| e.to_string())
            }
            CandidateProvider::ItemFiltering(index) => {
                let history = split
                    .train
                    .get(&user)
                    .ok_or_else(|| format!("user {user} missing from train split"))?;
                item_filter_candidates(history, index, &config.filter_params())
                    .map(Some)
                    .map_err(|e| e.to_string())
            }
            CandidateProvider::Loaded(sets) => sets
                .get(&user)
                .cloned()
                .map(Some)
                .ok_or_else(|| format!("no stored candidate set for user {user}")),
        }
    }
}

fn toggle_label(t: AblationToggles) -> String {
    if !t.use_candidates {
        return "none".to_string();
    }
    let mut parts = vec!["candidates"];
    if t.use_preference_step {
        parts.push("preference");
    }
    if t.use_representative_step {
        parts.push("representative");
    }
    if t.use_preference_step && t.use_representative_step {
        return "full".to_string();
    }
    parts.join("+")
}

/// Strategy label for records and summaries; nir-multi runs with non-default
/// toggles carry the ablation row name.
fn effective_label(config: &RunConfig) -> String {
    let base = config.strategy_label();
    if config.strategy == Strategy::NirMulti && config.ablation != AblationToggles::default() {
        format!("{base}:{}", toggle_label(config.ablation))
    } else {
        base
    }
}

fn sample_users(eligible: &[UserId], sample: Option<UserSample>) -> Vec<UserId> {
    match sample {
        None => eligible.to_vec(),
        Some(UserSample { count, seed }) => {
            if count >= eligible.len() {
                return eligible.to_vec();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pool = eligible.to_vec();
            let mut picked = Vec::with_capacity(count);
            for i in 0..count {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
                picked.push(pool[i]);
            }
            picked.sort_unstable();
            picked
        }
    }
}

fn build_gateway(config: &RunConfig, offline: bool) -> Result<Gateway, RunError> {
    let cache = match &config.backend.cache_dir {
        Some(dir) => Some(ResponseCache::open(dir)?),
        None => None,
    };
    let (backend, retry): (Box<dyn crate::gateway::CompletionBackend>, RetryPolicy) =
        match config.backend.kind {
            BackendKind::Stub => (Box::new(StubBackend::new()), RetryPolicy::immediate()),
            BackendKind::Http => (
                Box::new(HttpBackend::from_env(&config.backend.api_base)),
                RetryPolicy::default(),
            ),
        };
    let mut gateway = Gateway::new(backend, cache, retry);
    gateway.set_offline(offline);
    Ok(gateway)
}

fn load_candidates_file(
    path: &Path,
    config: &RunConfig,
) -> Result<BTreeMap<UserId, CandidateSet>, RunError> {
    let text = std::fs::read_to_string(path)?;
    let mut sets = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let set: CandidateSet = serde_json::from_str(line)
            .map_err(|e| RunError::CandidateFileMismatch(format!("line {}: {e}", idx + 1)))?;
        if set.method != config.filter {
            return Err(RunError::CandidateFileMismatch(format!(
                "stored method {} does not match configured filter {}",
                set.method, config.filter
            )));
        }
        if set.params != config.filter_params() {
            return Err(RunError::CandidateFileMismatch(format!(
                "stored params {:?} do not match configured {:?}",
                set.params,
                config.filter_params()
            )));
        }
        sets.insert(set.user_id, set);
    }
    Ok(sets)
}

struct WorkerOutput {
    record: EvalRecord,
    transcript: Option<Transcript>,
    candidates: Option<CandidateSet>,
}

struct RunContext<'a> {
    config: &'a RunConfig,
    data: &'a MovieLens,
    split: &'a Split,
    provider: &'a CandidateProvider,
    templates: Option<&'a TemplateSet>,
    gateway: Option<&'a Gateway>,
    label: String,
}

fn fail(user_id: UserId, stage: &str, message: impl ToString) -> UserFailure {
    UserFailure {
        user_id,
        stage: stage.to_string(),
        message: message.to_string(),
    }
}

/// Most recent `cap` train items, chronological order, mapped to titles.
fn watched_titles(ctx: &RunContext<'_>, user: UserId) -> Result<Vec<String>, UserFailure> {
    let history = ctx
        .split
        .train
        .get(&user)
        .ok_or_else(|| fail(user, "history", "user missing from train split"))?;
    let items = &history.items;
    let start = items.len().saturating_sub(ctx.config.history_cap);
    items[start..]
        .iter()
        .map(|&item| {
            ctx.data
                .catalog
                .title(item)
                .map(str::to_string)
                .ok_or_else(|| fail(user, "titles", format!("item {item} missing from catalog")))
        })
        .collect()
}

fn candidate_titles(
    ctx: &RunContext<'_>,
    user: UserId,
    set: &CandidateSet,
) -> Result<Vec<String>, UserFailure> {
    set.items
        .iter()
        .map(|&item| {
            ctx.data
                .catalog
                .title(item)
                .map(str::to_string)
                .ok_or_else(|| fail(user, "titles", format!("item {item} missing from catalog")))
        })
        .collect()
}

fn complete_prompt(
    ctx: &RunContext<'_>,
    user: UserId,
    prompt: String,
    prompt_ctx: &PromptContext,
    digests: &mut Vec<String>,
    transcript: &mut Transcript,
) -> Result<String, UserFailure> {
    let gateway = ctx
        .gateway
        .ok_or_else(|| fail(user, "gateway", "strategy requires a model backend"))?;
    let request = CompletionRequest {
        backend_id: gateway.backend_id().to_string(),
        model: ctx.config.backend.model.clone(),
        prompt,
        temperature: ctx.config.backend.temperature,
        max_tokens: ctx.config.backend.max_tokens,
        stop: None,
    };
    digests.push(cache_key(&request));
    let response = gateway
        .complete(&request, Some(prompt_ctx))
        .map_err(|e| fail(user, "completion", e))?;
    transcript.prompts.push(request.prompt);
    transcript.answers.push(response.text.clone());
    Ok(response.text)
}

fn run_user(ctx: &RunContext<'_>, user: UserId) -> Result<WorkerOutput, UserFailure> {
    let config = ctx.config;
    let gt = *ctx
        .split
        .ground_truth
        .get(&user)
        .ok_or_else(|| fail(user, "split", "user has no ground truth"))?;
    let candidates = ctx
        .provider
        .for_user(user, ctx.split, config)
        .map_err(|m| fail(user, "candidates", m))?;
    let watched = watched_titles(ctx, user)?;

    let mut digests = Vec::new();
    let mut transcript = Transcript {
        user_id: user,
        prompts: Vec::new(),
        answers: Vec::new(),
    };

    let ranking: Vec<ItemId>;
    let mut unresolved_count = 0usize;

    match (config.strategy, candidates.as_ref()) {
        (Strategy::CsRandom, Some(set)) => {
            ranking = cs_random_ranking(&set.items, derive_user_seed(config.seed, user), config.k);
        }
        (Strategy::CsRandom, None) => {
            return Err(fail(
                user,
                "candidates",
                "cs-random requires a candidate set",
            ));
        }
        (strategy, candidates_opt) => {
            let templates = ctx
                .templates
                .ok_or_else(|| fail(user, "templates", "strategy requires templates"))?;
            let (answer, scope) = match (strategy, candidates_opt) {
                (Strategy::Simple, _) | (Strategy::NirMulti, None) => {
                    let prompt = render_simple(templates, &watched, config.k)
                        .map_err(|e| fail(user, "prompt", e))?;
                    let prompt_ctx = PromptContext {
                        watched_titles: watched.clone(),
                        candidate_titles: Vec::new(),
                        k: config.k,
                    };
                    let answer = complete_prompt(
                        ctx,
                        user,
                        prompt,
                        &prompt_ctx,
                        &mut digests,
                        &mut transcript,
                    )?;
                    (answer, ResolutionScope::from_catalog(&ctx.data.catalog))
                }
                (Strategy::NirSingle, Some(set)) => {
                    let cand_titles = candidate_titles(ctx, user, set)?;
                    let prompt = render_single(templates, &cand_titles, &watched, config.k)
                        .map_err(|e| fail(user, "prompt", e))?;
                    let prompt_ctx = PromptContext {
                        watched_titles: watched.clone(),
                        candidate_titles: cand_titles,
                        k: config.k,
                    };
                    let answer = complete_prompt(
                        ctx,
                        user,
                        prompt,
                        &prompt_ctx,
                        &mut digests,
                        &mut transcript,
                    )?;
                    (
                        answer,
                        ResolutionScope::from_candidates(set, &ctx.data.catalog),
                    )
                }
                (Strategy::NirMulti, Some(set)) => {
                    let cand_titles = candidate_titles(ctx, user, set)?;
                    let toggles = config.ablation;
                    if !toggles.use_preference_step && !toggles.use_representative_step {
                        // candidate block + simple question, one completion
                        let prompt = render_simple_with_candidates(
                            templates,
                            &cand_titles,
                            &watched,
                            config.k,
                        )
                        .map_err(|e| fail(user, "prompt", e))?;
                        let prompt_ctx = PromptContext {
                            watched_titles: watched.clone(),
                            candidate_titles: cand_titles,
                            k: config.k,
                        };
                        let answer = complete_prompt(
                            ctx,
                            user,
                            prompt,
                            &prompt_ctx,
                            &mut digests,
                            &mut transcript,
                        )?;
                        (
                            answer,
                            ResolutionScope::from_candidates(set, &ctx.data.catalog),
                        )
                    } else {
                        let plan = ChainPlan::from_toggles(
                            toggles.use_preference_step,
                            toggles.use_representative_step,
                        );
                        let mut state = PromptChainState::new(
                            user,
                            cand_titles.clone(),
                            watched.clone(),
                            config.k,
                        )
                        .map_err(|e| fail(user, "prompt", e))?;
                        let prompt_ctx = PromptContext {
                            watched_titles: watched.clone(),
                            candidate_titles: cand_titles,
                            k: config.k,
                        };
                        let mut final_answer = String::new();
                        for (index, &step) in plan.steps().iter().enumerate() {
                            let prompt = render_chain_step(templates, &plan, &state, index)
                                .map_err(|e| fail(user, "prompt", e))?;
                            let answer = complete_prompt(
                                ctx,
                                user,
                                prompt.clone(),
                                &prompt_ctx,
                                &mut digests,
                                &mut transcript,
                            )?;
                            state.turns.push(ChainTurn {
                                step,
                                prompt,
                                answer: Some(answer.clone()),
                            });
                            final_answer = answer;
                        }
                        (
                            final_answer,
                            ResolutionScope::from_candidates(set, &ctx.data.catalog),
                        )
                    }
                }
                (Strategy::NirSingle, None) => {
                    return Err(fail(
                        user,
                        "candidates",
                        "nir-single requires a candidate set",
                    ));
                }
                (Strategy::CsRandom, _) => unreachable!("handled by the outer match"),
            };
            let lines = parse_lines(&answer);
            let extracted = resolve(&lines, &scope, config.k, config.extraction_threshold);
            unresolved_count = extracted.unresolved.len();
            ranking = extracted.items;
        }
    }

    let rank = rank_of_gt(&ranking, gt);
    let record = EvalRecord {
        user_id: user,
        strategy: ctx.label.clone(),
        k: config.k,
        rank_of_gt: rank,
        hit_at_k: hit_at_k(&ranking, gt, config.k),
        ndcg_at_k: ndcg_at_k(&ranking, gt, config.k),
        candidate_contained_gt: candidates.as_ref().map(|set| set.contains(gt)),
        prompt_digests: digests,
        unresolved_count,
    };
    Ok(WorkerOutput {
        record,
        transcript: if config.save_transcripts && !transcript.prompts.is_empty() {
            Some(transcript)
        } else {
            None
        },
        candidates,
    })
}

/// Runs the full pipeline with freshly loaded data.
pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let data = MovieLens::load_dir(&config.data_dir)?;
    run_loaded(config, &data, false)
}

/// Re-grades stored responses: identical pipeline, but any cache miss is a
/// per-user failure instead of a backend call.
pub fn grade(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let data = MovieLens::load_dir(&config.data_dir)?;
    run_loaded(config, &data, true)
}

/// Pipeline over pre-loaded data; `offline` forbids backend calls.
pub fn run_loaded(
    config: &RunConfig,
    data: &MovieLens,
    offline: bool,
) -> Result<RunOutcome, RunError> {
    config.validate()?;
    let split = crate::dataset::split_leave_one_out(&data.histories, config.min_history);
    if split.eligible_users.is_empty() {
        return Err(RunError::NoEligibleUsers);
    }
    let users = sample_users(&split.eligible_users, config.user_sample);

    let needs_candidates = config.strategy.uses_candidates()
        && (config.strategy != Strategy::NirMulti || config.ablation.use_candidates);
    let provider = if !needs_candidates {
        CandidateProvider::None
    } else if let Some(path) = &config.candidates_in {
        let sets = load_candidates_file(path, config)?;
        for &user in &users {
            if !sets.contains_key(&user) {
                return Err(RunError::MissingCandidates(user));
            }
        }
        CandidateProvider::Loaded(sets)
    } else {
        match config.filter {
            crate::candidates::FilterMethod::UserFiltering => {
                CandidateProvider::UserFiltering(build_user_vectors(&split))
            }
            crate::candidates::FilterMethod::ItemFiltering => {
                CandidateProvider::ItemFiltering(build_item_vectors(&split))
            }
        }
    };

    let needs_prompts = config.strategy != Strategy::CsRandom;
    let templates = if needs_prompts {
        Some(match &config.templates_dir {
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::builtin(),
        })
    } else {
        None
    };
    let gateway = if needs_prompts {
        Some(build_gateway(config, offline)?)
    } else {
        None
    };

    let ctx = RunContext {
        config,
        data,
        split: &split,
        provider: &provider,
        templates: templates.as_ref(),
        gateway: gateway.as_ref(),
        label: effective_label(config),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.backend.concurrency.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<WorkerOutput, UserFailure>> =
        pool.install(|| users.par_iter().map(|&user| run_user(&ctx, user)).collect());

    let mut records = Vec::new();
    let mut transcripts = Vec::new();
    let mut candidate_sets = Vec::new();
    let mut failures = Vec::new();
    let mut exhausted = 0usize;
    for result in results {
        match result {
            Ok(output) => {
                if output.candidates.as_ref().is_some_and(|c| c.exhausted) {
                    exhausted += 1;
                }
                if let Some(t) = output.transcript {
                    transcripts.push(t);
                }
                if let Some(c) = output.candidates {
                    candidate_sets.push(c);
                }
                records.push(output.record);
            }
            Err(failure) => failures.push(failure),
        }
    }

    let total = users.len();
    if failures.len() as f64 / total as f64 > 0.2 {
        return Err(RunError::TooManyFailures {
            failed: failures.len(),
            total,
        });
    }
    let metrics = aggregate(&records)?;

    let summary = RunSummary {
        strategy: metrics.strategy.clone(),
        k: metrics.k,
        user_count: metrics.user_count,
        failed_user_count: failures.len(),
        failed_users: failures.iter().map(|f| f.user_id).collect(),
        hr_at_k: metrics.hr_at_k,
        ndcg_at_k: metrics.ndcg_at_k,
        candidate_coverage: metrics.candidate_coverage,
        exhausted_candidate_sets: exhausted,
        template_digest: templates.as_ref().map(|t| t.digest()),
        config: config.clone(),
    };

    write_artifacts(config, &summary, &records, &transcripts, &candidate_sets)?;

    let (cache_hits, backend_calls) = gateway
        .as_ref()
        .map(|g| (g.cache_hits(), g.backend_calls()))
        .unwrap_or((0, 0));
    Ok(RunOutcome {
        summary,
        records,
        failures,
        cache_hits,
        backend_calls,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunError> {
    let mut file = std::fs::File::create(path)?;
    for row in rows {
        let line = serde_json::to_string(row)?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

fn write_artifacts(
    config: &RunConfig,
    summary: &RunSummary,
    records: &[EvalRecord],
    transcripts: &[Transcript],
    candidate_sets: &[CandidateSet],
) -> Result<(), RunError> {
    std::fs::create_dir_all(&config.output_dir)?;
    write_jsonl(&config.output_dir.join("records.jsonl"), records)?;
    let mut summary_json = serde_json::to_string_pretty(summary)?;
    summary_json.push('\n');
    std::fs::write(config.output_dir.join("summary.json"), summary_json)?;
    if config.save_transcripts {
        write_jsonl(&config.output_dir.join("transcripts.jsonl"), transcripts)?;
    }
    if let Some(path) = &config.candidates_out {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        write_jsonl(path, candidate_sets)?;
    }
    Ok(())
}

/// The five toggle rows of the component ablation, merged into
/// `ablation.csv` under the base output directory.
pub fn run_ablation(base: &RunConfig) -> Result<Vec<AblationRow>, RunError> {
    if base.strategy != Strategy::NirMulti
        || base.filter != crate::candidates::FilterMethod::UserFiltering
    {
        return Err(RunError::AblationRequiresMultiUf);
    }
    let data = MovieLens::load_dir(&base.data_dir)?;
    let rows_spec = [
        (false, false, false),
        (true, false, false),
        (true, true, false),
        (true, false, true),
        (true, true, true),
    ];
    let mut rows = Vec::new();
    for (use_candidates, use_preference_step, use_representative_step) in rows_spec {
        let toggles = AblationToggles {
            use_candidates,
            use_preference_step,
            use_representative_step,
        };
        let label = toggle_label(toggles);
        let mut config = base.clone();
        config.ablation = toggles;
        config.output_dir = base.output_dir.join("ablation").join(&label);
        let outcome = run_loaded(&config, &data, false)?;
        rows.push(AblationRow {
            label,
            toggles,
            summary: outcome.summary,
        });
    }

    std::fs::create_dir_all(&base.output_dir)?;
    let mut csv = format!(
        "candidate_set,user_preference,representative_movies,HR@{0},NDCG@{0}\n",
        base.k
    );
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{:.4},{:.4}\n",
            row.toggles.use_candidates,
            row.toggles.use_preference_step,
            row.toggles.use_representative_step,
            row.summary.hr_at_k,
            row.summary.ndcg_at_k
        ));
    }
    std::fs::write(base.output_dir.join("ablation.csv"), csv)?;
    Ok(rows)
}

/// One full run per candidate-set size, shared caches, one CSV row per size.
pub fn run_sweep(base: &RunConfig, sizes: &[usize]) -> Result<Vec<SweepRow>, RunError> {
    if sizes.is_empty() {
        return Err(RunError::Config(ConfigError::Invalid(
            "sweep sizes are empty".to_string(),
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &s in sizes {
        if s == 0 {
            return Err(RunError::Config(ConfigError::Invalid(
                "sweep sizes must be >= 1".to_string(),
            )));
        }
        if !seen.insert(s) {
            return Err(RunError::Config(ConfigError::Invalid(format!(
                "duplicate sweep size {s}"
            ))));
        }
    }
    let data = MovieLens::load_dir(&base.data_dir)?;
    let mut rows = Vec::new();
    for &s in sizes {
        let mut config = base.clone();
        config.s = s;
        config.output_dir = base.output_dir.join("sweep").join(format!("s-{s}"));
        // stored candidate sets are tied to one s; every size recomputes
        config.candidates_in = None;
        config.candidates_out = None;
        let outcome = run_loaded(&config, &data, false)?;
        rows.push(SweepRow {
            s,
            hr_at_k: outcome.summary.hr_at_k,
            ndcg_at_k: outcome.summary.ndcg_at_k,
            coverage: outcome.summary.candidate_coverage,
        });
    }
    std::fs::create_dir_all(&base.output_dir)?;
    let mut csv = format!("s,HR@{0},NDCG@{0},coverage\n", base.k);
    for row in &rows {
        let coverage = row.coverage.map(|c| format!("{c:.4}")).unwrap_or_default();
        csv.push_str(&format!(
            "{},{:.4},{:.4},{}\n",
            row.s, row.hr_at_k, row.ndcg_at_k, coverage
        ));
    }
    std::fs::write(base.output_dir.join("sweep.csv"), csv)?;
    Ok(rows)
}

/// Dataset statistics for the `ingest` command.
#[derive(Debug, Serialize)]
pub struct IngestReport {
    pub users: usize,
    pub items: usize,
    pub events: usize,
    pub eligible_users: usize,
}

pub fn ingest_report(config: &RunConfig) -> Result<IngestReport, RunError> {
    let data = MovieLens::load_dir(&config.data_dir)?;
    let split = crate::dataset::split_leave_one_out(&data.histories, config.min_history);
    Ok(IngestReport {
        users: data.user_count(),
        items: data.item_count(),
        events: data.event_count,
        eligible_users: split.eligible_users.len(),
    })
}

/// Computes candidate sets for every (sampled) eligible user and writes them
/// as JSONL to `config.candidates_out`.
pub fn export_candidates(config: &RunConfig) -> Result<usize, RunError> {
    config.validate()?;
    let out = config.candidates_out.clone().ok_or_else(|| {
        RunError::Config(ConfigError::Invalid(
            "candidates export requires candidates_out".to_string(),
        ))
    })?;
    let data = MovieLens::load_dir(&config.data_dir)?;
    let split = crate::dataset::split_leave_one_out(&data.histories, config.min_history);
    if split.eligible_users.is_empty() {
        return Err(RunError::NoEligibleUsers);
    }
    let users = sample_users(&split.eligible_users, config.user_sample);
    let params = config.filter_params();
    let sets: Vec<CandidateSet> = match config.filter {
        crate::candidates::FilterMethod::UserFiltering => {
            let index = build_user_vectors(&split);
            users
                .iter()
                .map(|&u| user_filter_candidates(u, &index, &params))
                .collect::<Result<_, _>>()?
        }
        crate::candidates::FilterMethod::ItemFiltering => {
            let index = build_item_vectors(&split);
            users
                .iter()
                .map(|&u| item_filter_candidates(&split.train[&u], &index, &params))
                .collect::<Result<_, _>>()?
        }
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_jsonl(&out, &sets)?;
    Ok(sets.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toggle_labels() {
        assert_eq!(
            toggle_label(AblationToggles {
                use_candidates: false,
                use_preference_step: false,
                use_representative_step: false
            }),
            "none"
        );
        assert_eq!(
            toggle_label(AblationToggles {
                use_candidates: true,
                use_preference_step: false,
                use_representative_step: false
            }),
            "candidates"
        );
        assert_eq!(
            toggle_label(AblationToggles {
                use_candidates: true,
                use_preference_step: true,
                use_representative_step: false
            }),
            "candidates+preference"
        );
        assert_eq!(toggle_label(AblationToggles::default()), "full");
    }

    #[test]
    fn sampling_is_deterministic_and_sorted() {
        let eligible: Vec<UserId> = (1..=100).collect();
        let a = sample_users(&eligible, Some(UserSample { count: 10, seed: 3 }));
        let b = sample_users(&eligible, Some(UserSample { count: 10, seed: 3 }));
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        let c = sample_users(&eligible, Some(UserSample { count: 10, seed: 4 }));
        assert_ne!(a, c);
        assert_eq!(
            sample_users(
                &eligible,
                Some(UserSample {
                    count: 500,
                    seed: 3
                })
            ),
            eligible
        );
    }
}
