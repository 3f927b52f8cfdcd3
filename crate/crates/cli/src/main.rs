mod backends;
mod commands;
mod manifest;
mod pool;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dxdistill::filter::FilterMode;
use dxdistill::RunConfig;

#[derive(Parser)]
#[command(name = "dxdistill", version, about = "Distill and filter multi-turn diagnostic trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run config JSON (or a manifest to re-run from)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the rollout and evaluation seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: available parallelism)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Sequential, fixed-order execution; manifests omit timings
    #[arg(long, global = true)]
    deterministic: bool,

    /// Log level (error, warn, info, debug, trace)
    #[arg(long, default_value = "info", global = true)]
    log_level: String,
}

#[derive(Subcommand)]
enum Command {
    /// Validate case files (or extract raw text) into environments
    BuildEnv {
        /// Directory of case JSON files and/or raw .txt case reports
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the valid cases and exit 0 even if some files fail
        #[arg(long)]
        keep_going: bool,
        /// Model used to extract cases from .txt reports
        #[arg(long)]
        extract_model: Option<String>,
    },
    /// Grow a trajectory tree per case; resumes partial stores in --out
    Rollout {
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Model that plays the oracle (default: deterministic menu matching)
        #[arg(long)]
        oracle_model: Option<String>,
        /// Model that extracts ordered tests (default: read from the reply)
        #[arg(long)]
        extract_model: Option<String>,
    },
    /// Score trajectories with DTC and RAC and prune them
    Filter {
        /// Directory of rollout stores
        #[arg(long)]
        stores: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        /// Directory holding the disease graph's nodes.tsv and edges.tsv
        #[arg(long)]
        disease_graph: PathBuf,
        /// Directory holding the test-disease graph's nodes.tsv and edges.tsv
        #[arg(long)]
        test_graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// dtc-rac, correctness or none
        #[arg(long)]
        filter: Option<FilterMode>,
        #[arg(long)]
        tau_rac: Option<u32>,
        #[arg(long)]
        unreachable_cap: Option<u32>,
    },
    /// Write chat-format training records from a filter run
    Emit {
        /// Output directory of `filter`
        #[arg(long)]
        filtered: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Records per shard; one file when unset
        #[arg(long)]
        shard_size: Option<usize>,
    },
    /// Evaluate a model on a case corpus
    Eval {
        #[arg(long)]
        cases: PathBuf,
        /// Teacher label from the config, or a new label
        #[arg(long)]
        model: String,
        /// Model id when the label is not in the config
        #[arg(long)]
        model_id: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        repeats: u32,
        /// Average per-turn scores instead of the union of orders
        #[arg(long)]
        per_turn: bool,
        /// Disease graph for the deterministic diagnosis judge
        #[arg(long)]
        disease_graph: Option<PathBuf>,
        /// Model for test matching (default: deterministic matcher)
        #[arg(long)]
        match_model: Option<String>,
        /// Model for the diagnosis judge (default: graph-linking judge)
        #[arg(long)]
        judge_model: Option<String>,
        #[arg(long)]
        oracle_model: Option<String>,
    },
    /// Summarize an output directory
    Stats {
        dir: PathBuf,
    },
}

/// An invocation the user has to fix; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Settings shared by every command.
pub struct Context {
    pub config: RunConfig,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub jobs: usize,
    pub deterministic: bool,
}

/// How a command finished.
pub enum Outcome {
    Success,
    /// Some items failed; outputs cover the rest.
    Partial,
}

fn context(cli: &Cli) -> anyhow::Result<Context> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(|e| Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.rollout.seed = seed;
        config.eval.seed = seed;
    }
    let jobs = if cli.deterministic {
        1
    } else {
        cli.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
            .max(1)
    };
    Ok(Context {
        seed: config.rollout.seed,
        config,
        config_path: cli.config.clone(),
        jobs,
        deterministic: cli.deterministic,
    })
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let mut ctx = context(&cli)?;
    match cli.command {
        Command::BuildEnv {
            input,
            out,
            keep_going,
            extract_model,
        } => commands::build_env::run(&ctx, &input, &out, keep_going, extract_model.as_deref()),
        Command::Rollout {
            cases,
            out,
            oracle_model,
            extract_model,
        } => commands::rollout::run(&ctx, &cases, &out, oracle_model.as_deref(), extract_model.as_deref()),
        Command::Filter {
            stores,
            cases,
            disease_graph,
            test_graph,
            out,
            filter,
            tau_rac,
            unreachable_cap,
        } => {
            let f = &mut ctx.config.filter;
            if let Some(mode) = filter {
                f.mode = mode;
            }
            if let Some(tau) = tau_rac {
                f.rac_threshold = tau;
            }
            if let Some(cap) = unreachable_cap {
                f.unreachable_cap = cap;
            }
            f.validate().map_err(|e| Usage(e.to_string()))?;
            commands::filter::run(&ctx, &stores, &cases, &disease_graph, &test_graph, &out)
        }
        Command::Emit {
            filtered,
            cases,
            out,
            shard_size,
        } => {
            if shard_size == Some(0) {
                return Err(Usage("--shard-size must be positive".into()).into());
            }
            commands::emit::run(&ctx, &filtered, &cases, &out, shard_size)
        }
        Command::Eval {
            cases,
            model,
            model_id,
            out,
            repeats,
            per_turn,
            disease_graph,
            match_model,
            judge_model,
            oracle_model,
        } => {
            if repeats == 0 {
                return Err(Usage("--repeats must be positive".into()).into());
            }
            if per_turn {
                ctx.config.eval.per_turn = true;
            }
            let args = commands::eval::EvalArgs {
                cases: &cases,
                model: &model,
                model_id: model_id.as_deref(),
                out: &out,
                repeats,
                disease_graph: disease_graph.as_deref(),
                match_model: match_model.as_deref(),
                judge_model: judge_model.as_deref(),
                oracle_model: oracle_model.as_deref(),
            };
            commands::eval::run(&ctx, &args)
        }
        Command::Stats { dir } => commands::stats::run(&dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(1),
        Err(e) if e.downcast_ref::<Usage>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
