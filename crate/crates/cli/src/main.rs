use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use moralchain::{Setting, TaskKind};

mod commands;
mod config;
mod manifest;

use commands::{CellFilter, Ctx};

#[derive(Parser)]
#[command(name = "moralchain", version, about = "Moral reasoning data and evaluation pipeline")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use deterministic in-process stub endpoints instead of HTTP.
    #[arg(long, global = true)]
    stub_endpoint: bool,
    /// Overrides `paths.out_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides `paths.cache_dir`.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Overrides `client.request_cap`.
    #[arg(long, global = true)]
    request_cap: Option<usize>,
    /// Overrides `client.max_in_flight`.
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct CellArgs {
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    setting: Option<Setting>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl From<&CellArgs> for CellFilter {
    fn from(a: &CellArgs) -> Self {
        Self { task: a.task, setting: a.setting, size: a.size, seed: a.seed }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Normalize the dataset, keep full-agreement rows, write stats.
    Ingest,
    /// Generate teacher inference chains (cached).
    GenChains {
        #[arg(long)]
        task: Option<TaskKind>,
    },
    /// Emit JSONL training corpora for one cell or the whole grid.
    EmitCorpus(CellArgs),
    /// Score a predictions file or query the model endpoint.
    Eval {
        #[command(flatten)]
        cell: CellArgs,
        /// JSONL of `{"id", "raw"}` model outputs.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Replace predicted foundations with gold ones mid-chain.
    Intervene {
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Perplexity of the model under test on held-out text.
    Ppl {
        #[command(flatten)]
        cell: CellArgs,
        /// Score this text instead of the configured files.
        #[arg(long)]
        text: Option<String>,
    },
    /// Aggregate results into tables and CSVs.
    Report,
    /// Write the synthetic mini-dataset as CSV.
    Synth {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::GenChains { .. } => "gen-chains",
            Command::EmitCorpus(_) => "emit-corpus",
            Command::Eval { .. } => "eval",
            Command::Intervene { .. } => "intervene",
            Command::Ppl { .. } => "ppl",
            Command::Report => "report",
            Command::Synth { .. } => "synth",
        }
    }
}

fn run(cli: Cli, args: Vec<String>) -> Result<serde_json::Value> {
    if let Command::Synth { n, seed, out } = &cli.command {
        return commands::synth_cmd(*n, *seed, out);
    }
    let path = cli.config.as_ref().ok_or_else(|| anyhow!("--config <path> is required"))?;
    let mut cfg = config::Loaded::load(path)?;
    if let Some(d) = &cli.out_dir {
        cfg.config.paths.out_dir = d.clone();
    }
    if let Some(d) = &cli.cache_dir {
        cfg.config.paths.cache_dir = d.clone();
    }
    if cli.request_cap.is_some() {
        cfg.config.client.request_cap = cli.request_cap;
    }
    if let Some(k) = cli.max_in_flight {
        cfg.config.client.max_in_flight = k.max(1);
    }
    let ctx = Ctx { cfg, stub: cli.stub_endpoint, command: cli.command.name().to_string(), args };
    match &cli.command {
        Command::Ingest => commands::ingest_cmd(&ctx),
        Command::GenChains { task } => commands::gen_chains_cmd(&ctx, *task),
        Command::EmitCorpus(c) => commands::emit_corpus_cmd(&ctx, &c.into()),
        Command::Eval { cell, predictions } => commands::eval_cmd(&ctx, &cell.into(), predictions.as_deref()),
        Command::Intervene { size, seed } => {
            commands::intervene_cmd(&ctx, &CellFilter { size: *size, seed: *seed, ..Default::default() })
        }
        Command::Ppl { cell, text } => commands::ppl_cmd(&ctx, &cell.into(), text.as_deref()),
        Command::Report => commands::report_cmd(&ctx),
        Command::Synth { .. } => unreachable!(),
    }
}

/// Variant name of the first library error in the chain, e.g.
/// `MismatchedIds`.
fn error_kind(err: &anyhow::Error) -> String {
    fn variant(debug: String) -> String {
        debug.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect()
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<moralchain::EvalError>() {
            return variant(format!("{e:?}"));
        }
        if let Some(e) = cause.downcast_ref::<moralchain::CorpusError>() {
            return variant(format!("{e:?}"));
        }
        if let Some(e) = cause.downcast_ref::<moralchain::DatasetError>() {
            return variant(format!("{e:?}"));
        }
        if let Some(e) = cause.downcast_ref::<moralchain::TeacherError>() {
            return variant(format!("{e:?}"));
        }
        if let Some(e) = cause.downcast_ref::<moralchain::InterventionError>() {
            return variant(format!("{e:?}"));
        }
    }
    "Error".into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match run(cli, args) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let body = serde_json::json!({
                "error": {
                    "kind": error_kind(&e),
                    "message": format!("{e:#}"),
                }
            });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
