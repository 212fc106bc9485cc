//! Command-line driver for the language-adaptation pipeline.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad config, bad
//! inputs), 2 runtime failure.

mod config;
mod io;
mod plot;
mod stages;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;
use stages::Ctx;

/// Every fallible CLI path funnels into this; the kind picks the exit code.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    /// true for input/config problems (exit 1), false for runtime failures
    /// (exit 2)
    pub is_validation: bool,
}

impl CliError {
    pub fn validation(message: String) -> Self {
        CliError { message, is_validation: true }
    }

    pub fn runtime(message: String) -> Self {
        CliError { message, is_validation: false }
    }

    fn exit_code(&self) -> ExitCode {
        ExitCode::from(if self.is_validation { 1 } else { 2 })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Parser)]
#[command(
    name = "langadapt",
    about = "Adapt a small causal language model to a new language: tokenizer \
             training, embedding transplant, corpus cleanup, regularized \
             continued pre-training, instruction tuning, and evaluation.",
    version
)]
struct Cli {
    /// TOML configuration file; omit to use built-in defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config value, e.g. --set pretrain.lr=1e-4 (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Random seed; overrides the config's seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts; overrides paths.out_dir
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Suppress progress output
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train the target and donor subword tokenizers
    TokenizerTrain,
    /// Report fertility and efficiency of the trained tokenizers
    TokenizerAnalyze,
    /// Build the target-vocabulary model by transplanting donor embeddings
    Transplant,
    /// Remove near-duplicate paragraphs from the target corpus
    CorpusDedup,
    /// Drop low-quality paragraphs from the (deduplicated) corpus
    CorpusFilter,
    /// Continued pre-training with regularization toward the initial model
    Pretrain,
    /// Instruction tuning on the bundled prompt/response pairs
    Sft,
    /// Perplexity and multiple-choice accuracy of the latest checkpoint
    Eval,
    /// Run the ablation matrix (regularization, filtration, vocabulary,
    /// instruction sets)
    Ablate,
    /// All stages end to end
    Pipeline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::TokenizerTrain => "tokenizer-train",
            Command::TokenizerAnalyze => "tokenizer-analyze",
            Command::Transplant => "transplant",
            Command::CorpusDedup => "corpus-dedup",
            Command::CorpusFilter => "corpus-filter",
            Command::Pretrain => "pretrain",
            Command::Sft => "sft",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::Pipeline => "pipeline",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = PipelineConfig::load(
        cli.config.as_deref(),
        &cli.overrides,
        cli.seed,
        cli.out.as_deref(),
    )?;
    let ctx = Ctx { cfg, quiet: cli.quiet };
    stages::run_command(cli.command.name(), &ctx)
}

fn main() -> ExitCode {
    // clap's default error exit code is 2; usage problems are validation
    // errors here, so remap them to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
