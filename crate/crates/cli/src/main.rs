use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod analyze;
mod commands;

/// Corpus recycling pipeline: ingest, score, filter, recycle, assemble,
/// analyze, and a toy GRPO trainer.
///
/// Every global flag can also be set through the environment variable shown
/// in its help (prefix `WEBRECYCLE_`).
#[derive(Debug, Parser)]
#[command(name = "webrecycle", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration; omitted keys take the published defaults.
    #[arg(long, global = true, env = "WEBRECYCLE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice (overrides the config).
    #[arg(long, global = true, env = "WEBRECYCLE_SEED")]
    pub seed: Option<u64>,
    /// Token counter: whitespace-words or bytes-div-4 (overrides the config).
    #[arg(long, global = true, env = "WEBRECYCLE_COUNTER")]
    pub counter: Option<String>,
    /// Worker threads for document-level work; 1 runs sequentially.
    /// Defaults to the number of available cores.
    #[arg(long, global = true, env = "WEBRECYCLE_PARALLEL")]
    pub parallel: Option<usize>,
    /// Output file (pool commands) or directory (analyze, grpo-lab).
    #[arg(long, global = true, env = "WEBRECYCLE_OUT")]
    pub out: Option<PathBuf>,
    /// Service endpoint as KIND=TRANSPORT:ADDRESS, e.g.
    /// `rephrase=stdio-lines:python3 stub.py` or `embed=builtin:hash`.
    /// Repeatable; overrides the config for that kind.
    #[arg(long = "endpoint", global = true, value_name = "SPEC")]
    pub endpoints: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a line-delimited record file into a pool with a manifest.
    Ingest(commands::IngestArgs),
    /// Score every document of a pool with the DataMan judge.
    Score(commands::ScoreArgs),
    /// Select documents by threshold or by token budget.
    Filter(commands::FilterArgs),
    /// Rephrase every document of a pool.
    Recycle(commands::RecycleArgs),
    /// Union of the high-quality organic and recycled pools.
    Assemble(commands::AssembleArgs),
    /// Distribution reports over organic/recycled pairs.
    Analyze(analyze::AnalyzeArgs),
    /// Train the toy policy and write validation reward curves.
    GrpoLab(commands::GrpoLabArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
