//! `nir` command line: ingest, candidate export, runs, ablation, sweep, and
//! offline re-grading. Settings come from an optional TOML config with flag
//! overrides. Exit codes: 0 success, 1 usage or configuration error, 2
//! run-level failure.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use nir::candidates::FilterMethod;
use nir::config::parse_sweep_sizes;
use nir::config::{BackendKind, RunConfig, Strategy, UserSample};
use nir::runner;

#[derive(Parser)]
#[command(
    name = "nir",
    version,
    about = "Zero-shot next-item recommendation harness"
)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset and print its statistics.
    Ingest(CommonArgs),
    /// Compute candidate sets and write them as JSONL.
    Candidates(CommonArgs),
    /// Execute one strategy end to end.
    Run(CommonArgs),
    /// Run the five-row prompting-component ablation.
    Ablate(CommonArgs),
    /// Run one full pass per candidate-set size.
    Sweep(SweepArgs),
    /// Re-extract and re-score stored responses without new API calls.
    Grade(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<Strategy>,
    #[arg(long, value_enum)]
    filter: Option<FilterMethod>,
    /// Similar users considered by user filtering.
    #[arg(short, long)]
    m: Option<usize>,
    /// Similar movies per history item in item filtering.
    #[arg(short, long)]
    n: Option<usize>,
    /// Candidate set size.
    #[arg(short, long)]
    s: Option<usize>,
    /// Recommendation list length.
    #[arg(short, long)]
    k: Option<usize>,
    /// Most recent train items rendered into prompts.
    #[arg(long)]
    history_cap: Option<usize>,
    #[arg(long)]
    min_history: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    extraction_threshold: Option<f64>,
    /// Directory of prompt template files.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    api_base: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Bound on in-flight model requests.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Evaluate a deterministic sample of this many users.
    #[arg(long)]
    user_sample: Option<usize>,
    #[arg(long)]
    sample_seed: Option<u64>,
    #[arg(long)]
    candidates_in: Option<PathBuf>,
    #[arg(long)]
    candidates_out: Option<PathBuf>,
    /// Write per-user prompts and answers next to the records.
    #[arg(long)]
    transcripts: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sizes as an inclusive range `15..22` or a comma list `15,17,19`.
    #[arg(long, default_value = "15..22")]
    sizes: String,
    #[command(flatten)]
    common: CommonArgs,
}

impl CommonArgs {
    fn apply(&self, config: &mut RunConfig) {
        let args = self.clone();
        if let Some(v) = args.data_dir {
            config.data_dir = v;
        }
        if let Some(v) = args.output_dir {
            config.output_dir = v;
        }
        if let Some(v) = args.strategy {
            config.strategy = v;
        }
        if let Some(v) = args.filter {
            config.filter = v;
        }
        if let Some(v) = args.m {
            config.m = v;
        }
        if let Some(v) = args.n {
            config.n = v;
        }
        if let Some(v) = args.s {
            config.s = v;
        }
        if let Some(v) = args.k {
            config.k = v;
        }
        if let Some(v) = args.history_cap {
            config.history_cap = v;
        }
        if let Some(v) = args.min_history {
            config.min_history = v;
        }
        if let Some(v) = args.seed {
            config.seed = v;
        }
        if let Some(v) = args.extraction_threshold {
            config.extraction_threshold = v;
        }
        if let Some(v) = args.templates {
            config.templates_dir = Some(v);
        }
        if let Some(v) = args.backend {
            config.backend.kind = v;
        }
        if let Some(v) = args.model {
            config.backend.model = v;
        }
        if let Some(v) = args.api_base {
            config.backend.api_base = v;
        }
        if let Some(v) = args.cache_dir {
            config.backend.cache_dir = Some(v);
        }
        if let Some(v) = args.concurrency {
            config.backend.concurrency = v;
        }
        if let Some(count) = args.user_sample {
            let seed = args.sample_seed.unwrap_or(config.seed);
            config.user_sample = Some(UserSample { count, seed });
        }
        if let Some(v) = args.candidates_in {
            config.candidates_in = Some(v);
        }
        if let Some(v) = args.candidates_out {
            config.candidates_out = Some(v);
        }
        if args.transcripts {
            config.save_transcripts = true;
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_toml_file(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn print_summary(summary: &nir::RunSummary) {
    println!(
        "{}: HR@{} = {:.4}  NDCG@{} = {:.4}  users = {} (failed {}){}",
        summary.strategy,
        summary.k,
        summary.hr_at_k,
        summary.k,
        summary.ndcg_at_k,
        summary.user_count,
        summary.failed_user_count,
        summary
            .candidate_coverage
            .map(|c| format!("  coverage = {c:.4}"))
            .unwrap_or_default()
    );
    println!("artifacts: {}", summary.config.output_dir.display());
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(args) => {
            let mut config = load_config(&cli.config)?;
            args.apply(&mut config);
            let report = runner::ingest_report(&config)?;
            println!("users: {}", report.users);
            println!("items: {}", report.items);
            println!("events: {}", report.events);
            println!("eligible users: {}", report.eligible_users);
            if report.eligible_users == 0 {
                eprintln!("warning: no users meet min_history; runs will fail");
            }
            Ok(())
        }
        Command::Candidates(args) => {
            let mut config = load_config(&cli.config)?;
            args.apply(&mut config);
            if config.candidates_out.is_none() {
                config.candidates_out = Some(config.output_dir.join("candidates.jsonl"));
            }
            let count = runner::export_candidates(&config)?;
            println!(
                "wrote {count} candidate sets to {}",
                config.candidates_out.as_ref().unwrap().display()
            );
            Ok(())
        }
        Command::Run(args) => {
            let mut config = load_config(&cli.config)?;
            args.apply(&mut config);
            let outcome = runner::run(&config)?;
            print_summary(&outcome.summary);
            Ok(())
        }
        Command::Ablate(args) => {
            let mut config = load_config(&cli.config)?;
            args.apply(&mut config);
            let rows = runner::run_ablation(&config)?;
            println!(
                "candidate_set  user_preference  representative  HR@{}",
                config.k
            );
            for row in &rows {
                println!(
                    "{:<13}  {:<15}  {:<14}  {:.4}",
                    row.toggles.use_candidates,
                    row.toggles.use_preference_step,
                    row.toggles.use_representative_step,
                    row.summary.hr_at_k
                );
            }
            println!(
                "ablation table: {}",
                config.output_dir.join("ablation.csv").display()
            );
            Ok(())
        }
        Command::Sweep(args) => {
            let mut config = load_config(&cli.config)?;
            args.common.apply(&mut config);
            let sizes = parse_sweep_sizes(&args.sizes)?;
            let rows = runner::run_sweep(&config, &sizes)?;
            println!("s  HR@{}  NDCG@{}  coverage", config.k, config.k);
            for row in &rows {
                println!(
                    "{:<2} {:.4}  {:.4}  {}",
                    row.s,
                    row.hr_at_k,
                    row.ndcg_at_k,
                    row.coverage.map(|c| format!("{c:.4}")).unwrap_or_default()
                );
            }
            println!(
                "sweep table: {}",
                config.output_dir.join("sweep.csv").display()
            );
            Ok(())
        }
        Command::Grade(args) => {
            let mut config = load_config(&cli.config)?;
            args.apply(&mut config);
            let outcome = runner::grade(&config)?;
            print_summary(&outcome.summary);
            Ok(())
        }
    }
}

/// Usage/config problems exit 1, run-level failures exit 2.
fn classify_exit(err: &anyhow::Error) -> u8 {
    if let Some(run_err) = err.downcast_ref::<runner::RunError>() {
        match run_err {
            runner::RunError::Config(_)
            | runner::RunError::AblationRequiresMultiUf
            | runner::RunError::CandidateFileMismatch(_) => 1,
            _ => 2,
        }
    } else if err.downcast_ref::<nir::config::ConfigError>().is_some() {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful exits; anything else is usage
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_exit(&err))
        }
    }
}
