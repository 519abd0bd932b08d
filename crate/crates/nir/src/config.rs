//! Run configuration: TOML file plus CLI-flag overrides, echoed verbatim
//! into every summary so runs stay comparable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{FilterMethod, FilterParams};
use crate::extraction::DEFAULT_JACCARD_THRESHOLD;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which pipeline a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Watched titles inline, no candidate set, catalog-wide extraction.
    Simple,
    /// Random sample from the candidate set; no language model involved.
    CsRandom,
    /// All instructions in one prompt.
    NirSingle,
    /// Three chained prompts threading intermediate answers.
    NirMulti,
}

impl Strategy {
    pub fn uses_candidates(&self) -> bool {
        !matches!(self, Strategy::Simple)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Simple => "simple",
            Strategy::CsRandom => "cs-random",
            Strategy::NirSingle => "nir-single",
            Strategy::NirMulti => "nir-multi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// OpenAI-compatible completions endpoint.
    Http,
    /// Deterministic offline backend.
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub model: String,
    pub api_base: String,
    pub cache_dir: Option<PathBuf>,
    /// Bound on in-flight requests (worker threads).
    pub concurrency: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            kind: BackendKind::Stub,
            model: "stub".to_string(),
            api_base: "https://api.openai.com/v1".to_string(),
            cache_dir: None,
            concurrency: 4,
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

/// Which prompting components a run keeps; all on by default. Only consulted
/// by the nir-multi pipeline (the ablation harness toggles them row by row).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationToggles {
    pub use_candidates: bool,
    pub use_preference_step: bool,
    pub use_representative_step: bool,
}

impl Default for AblationToggles {
    fn default() -> Self {
        AblationToggles {
            use_candidates: true,
            use_preference_step: true,
            use_representative_step: true,
        }
    }
}

/// Evaluate a deterministic sample of eligible users instead of all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSample {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub strategy: Strategy,
    pub filter: FilterMethod,
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub k: usize,
    /// Most recent train items rendered into prompts.
    pub history_cap: usize,
    pub min_history: usize,
    pub seed: u64,
    pub extraction_threshold: f64,
    pub templates_dir: Option<PathBuf>,
    pub backend: BackendSettings,
    pub ablation: AblationToggles,
    pub user_sample: Option<UserSample>,
    pub candidates_in: Option<PathBuf>,
    pub candidates_out: Option<PathBuf>,
    /// Write prompts and answers per user alongside the records.
    pub save_transcripts: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data/ml-100k"),
            output_dir: PathBuf::from("runs/out"),
            strategy: Strategy::NirMulti,
            filter: FilterMethod::UserFiltering,
            m: 10,
            n: 10,
            s: 19,
            k: 10,
            history_cap: 25,
            min_history: 2,
            seed: 42,
            extraction_threshold: DEFAULT_JACCARD_THRESHOLD,
            templates_dir: None,
            backend: BackendSettings::default(),
            ablation: AblationToggles::default(),
            user_sample: None,
            candidates_in: None,
            candidates_out: None,
            save_transcripts: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn filter_params(&self) -> FilterParams {
        FilterParams {
            m: self.m,
            n: self.n,
            s: self.s,
        }
    }

    /// Strategy label including the filter for candidate-based strategies.
    pub fn strategy_label(&self) -> String {
        if self.strategy.uses_candidates() {
            format!("{}-{}", self.strategy.as_str(), self.filter)
        } else {
            self.strategy.as_str().to_string()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.filter_params()
            .validate()
            .map_err(ConfigError::Invalid)?;
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be >= 1".to_string()));
        }
        if self.history_cap == 0 {
            return Err(ConfigError::Invalid("history_cap must be >= 1".to_string()));
        }
        if self.min_history < 2 {
            return Err(ConfigError::Invalid("min_history must be >= 2".to_string()));
        }
        if !(0.0..=1.0).contains(&self.extraction_threshold) {
            return Err(ConfigError::Invalid(
                "extraction_threshold must be within [0, 1]".to_string(),
            ));
        }
        if self.backend.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be >= 1".to_string()));
        }
        if self.backend.temperature < 0.0 {
            return Err(ConfigError::Invalid("temperature must be >= 0".to_string()));
        }
        if self.backend.max_tokens == 0 {
            return Err(ConfigError::Invalid("max_tokens must be >= 1".to_string()));
        }
        if let Some(sample) = &self.user_sample {
            if sample.count == 0 {
                return Err(ConfigError::Invalid(
                    "user_sample.count must be >= 1".to_string(),
                ));
            }
        }
        if self.backend.kind == BackendKind::Http && self.backend.model.trim().is_empty() {
            return Err(ConfigError::Invalid(
                "http backend requires a model name".to_string(),
            ));
        }
        Ok(())
    }
}

/// Parses sweep sizes given as `a..b` (inclusive) or a comma list; rejects
/// duplicates.
pub fn parse_sweep_sizes(spec: &str) -> Result<Vec<usize>, ConfigError> {
    let spec = spec.trim();
    let sizes: Vec<usize> = if let Some((lo, hi)) = spec.split_once("..") {
        let lo: usize = lo
            .trim()
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("bad sweep range start {lo:?}")))?;
        let hi: usize = hi
            .trim()
            .trim_start_matches('=')
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("bad sweep range end {hi:?}")))?;
        if lo > hi {
            return Err(ConfigError::Invalid(format!(
                "sweep range {lo}..{hi} is empty"
            )));
        }
        (lo..=hi).collect()
    } else {
        spec.split(',')
            .map(|part| {
                part.trim()
                    .parse::<usize>()
                    .map_err(|_| ConfigError::Invalid(format!("bad sweep size {part:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    if sizes.is_empty() {
        return Err(ConfigError::Invalid("sweep sizes are empty".to_string()));
    }
    if sizes.contains(&0) {
        return Err(ConfigError::Invalid("sweep sizes must be >= 1".to_string()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for &s in &sizes {
        if !seen.insert(s) {
            return Err(ConfigError::Invalid(format!("duplicate sweep size {s}")));
        }
    }
    Ok(sizes)
}
