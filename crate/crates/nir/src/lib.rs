//! Zero-shot next-item recommendation over MovieLens 100K.
//!
//! The pipeline builds per-user candidate sets by user or item filtering,
//! drives a completion model through a chain of prompts (preferences →
//! representative movies → format-constrained recommendations), extracts the
//! ranked titles from the answer text, and evaluates HR@K / NDCG@K under a
//! leave-one-out split. A deterministic stub backend makes every run, the
//! ablation harness, and the candidate-size sweep reproducible offline.

pub mod candidates;
pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod extraction;
pub mod gateway;
pub mod prompting;
pub mod runner;

pub use candidates::{FilterMethod, FilterParams};
pub use config::{RunConfig, Strategy};
pub use runner::{run, run_ablation, run_sweep, RunOutcome, RunSummary};
