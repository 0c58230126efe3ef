//! `smi`: dataset-level membership inference by self-comparison.
//!
//! Exit codes: 0 success, 2 input or config error, 3 backend error,
//! 4 statistical precondition error.

mod analysis;
mod config;
mod manifest;
mod pipeline;
mod sets;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use smi_core::{ErrorClass, SmiError};

use crate::config::FileConfig;

#[derive(Debug, Parser)]
#[command(
    name = "smi",
    version,
    about = "Dataset-level membership inference by self-comparison"
)]
struct Cli {
    /// TOML config; flags override its values.
    #[arg(long, global = true, visible_alias = "spec")]
    config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent requests per backend.
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    /// -v for info, -vv for debug. RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Truncate and split a JSONL corpus into prefix/suffix samples.
    Prepare(pipeline::PrepareArgs),
    /// Rewrite the suffix of every prepared sample.
    Paraphrase(pipeline::ParaphraseArgs),
    /// Score original and paraphrased samples with a suspect model.
    Score(pipeline::ScoreArgs),
    /// SMI verdict for a candidate set against an auxiliary set.
    Infer(analysis::InferArgs),
    /// Run a baseline detector on a candidate set.
    Baseline(analysis::BaselineArgs),
    /// Compare methods on a labelled benchmark.
    Evaluate(analysis::EvaluateArgs),
    /// Write a synthetic benchmark to disk.
    Synth(analysis::SynthArgs),
}

/// Settings shared by every subcommand.
pub struct Context {
    pub file: FileConfig,
    pub seed: u64,
    pub max_in_flight: Option<usize>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let ctx = Context {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        max_in_flight: cli.max_in_flight.or(file.max_in_flight),
        file,
    };
    if ctx.max_in_flight == Some(0) {
        return Err(SmiError::Config("--max-in-flight must be at least 1".into()).into());
    }
    match &cli.command {
        Command::Prepare(a) => pipeline::prepare(&ctx, a),
        Command::Paraphrase(a) => pipeline::paraphrase(&ctx, a),
        Command::Score(a) => pipeline::score(&ctx, a),
        Command::Infer(a) => analysis::infer(&ctx, a),
        Command::Baseline(a) => analysis::baseline(&ctx, a),
        Command::Evaluate(a) => analysis::evaluate(&ctx, a),
        Command::Synth(a) => analysis::synth(&ctx, a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let class = err
        .chain()
        .find_map(|e| e.downcast_ref::<SmiError>())
        .map(SmiError::class);
    match class {
        Some(ErrorClass::Backend) => 3,
        Some(ErrorClass::Statistical) => 4,
        Some(ErrorClass::Input) | None => 2,
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn describe(err: &anyhow::Error) -> String {
    let mut out: Vec<String> = Vec::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.last().is_some_and(|prev| prev.contains(&msg)) {
            out.push(msg);
        }
    }
    out.join(": ")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
