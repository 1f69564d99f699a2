//! `langshift`: language means, mean-difference shifts and cross-lingual
//! evaluation over embedding dumps.
//!
//! Exit status is 0 on success, 1 on runtime or data errors and 2 on usage
//! or configuration errors. Verbosity follows `LANGSHIFT_LOG`.

mod commands;
mod config;
mod grid;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::UsageError;

#[derive(Debug, Parser)]
#[command(name = "langshift", version, about = "Language means and mean-difference shifts for encoder embeddings")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the seed of synth and sensitivity configs.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Report format (default: csv for sweep, json otherwise).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Average every token of one language in a dump.
    Mean(MeanArgs),
    /// Apply zero-mean or a mean-difference shift to a dump.
    Shift(ShiftArgs),
    /// Sentence retrieval with original, zero-mean and MDS embeddings.
    Retrieve(RetrieveArgs),
    /// Nearest-token translation of a shifted dump, scored by BLEU-1 and conversion rate.
    TranslateEval(TranslateArgs),
    /// translate-eval over an alpha x layer grid.
    Sweep(SweepArgs),
    /// Write a synthetic bilingual corpus with known offsets.
    Synth(SynthArgs),
    /// Compare the methods on synthetic corpora over several seeds.
    Sensitivity(SensitivityArgs),
    /// Check dumps, tables, mean files and vocabularies.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct MeanArgs {
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long)]
    pub language: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip the special tokens listed in the dump manifest.
    #[arg(long)]
    pub exclude_special: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShiftMethod {
    ZeroMean,
    Mds,
}

#[derive(Debug, Args)]
pub struct ShiftArgs {
    #[arg(long)]
    pub dump: PathBuf,
    /// Mean file; repeat once per language.
    #[arg(long = "mean", required = true)]
    pub means: Vec<PathBuf>,
    #[arg(long, value_enum)]
    pub method: ShiftMethod,
    #[arg(long, required_if_eq("method", "mds"))]
    pub src: Option<String>,
    #[arg(long, required_if_eq("method", "mds"))]
    pub tgt: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long)]
    pub src: String,
    #[arg(long)]
    pub tgt: String,
    #[arg(long)]
    pub alpha: f64,
    #[arg(long)]
    pub layer: u32,
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub refs: PathBuf,
    /// Mean file; repeat once per language.
    #[arg(long = "mean", required = true)]
    pub means: Vec<PathBuf>,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub tgt_vocab: PathBuf,
    /// Only decode into ids of this vocabulary TSV.
    #[arg(long)]
    pub restrict: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dump path; `{layer}` is replaced by each layer.
    #[arg(long)]
    pub dump: String,
    #[arg(long)]
    pub src: String,
    #[arg(long)]
    pub tgt: String,
    /// `start:stop:step` (inclusive) or a comma list.
    #[arg(long, value_parser = grid::parse_alphas)]
    pub alphas: grid::Alphas,
    /// Comma list, e.g. `8,9,10,11`.
    #[arg(long, value_parser = grid::parse_layers)]
    pub layers: grid::Layers,
    /// Table path; `{layer}` is replaced by each layer.
    #[arg(long)]
    pub table: String,
    #[arg(long)]
    pub refs: PathBuf,
    /// Mean file pattern with `{layer}`; repeat once per language.
    #[arg(long = "mean", required = true)]
    pub means: Vec<String>,
    #[arg(long)]
    pub src_vocab: PathBuf,
    #[arg(long)]
    pub tgt_vocab: PathBuf,
    #[arg(long)]
    pub restrict: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-pair diagnostics of the first seed as CSV.
    #[arg(long)]
    pub pairs_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long = "dump")]
    pub dumps: Vec<PathBuf>,
    #[arg(long = "table")]
    pub tables: Vec<PathBuf>,
    #[arg(long = "mean")]
    pub means: Vec<PathBuf>,
    #[arg(long = "vocab")]
    pub vocabs: Vec<PathBuf>,
}

pub struct Globals {
    pub seed: Option<u64>,
    pub format: Option<Format>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let usage = err.chain().any(|c| {
        c.downcast_ref::<UsageError>().is_some()
            || c.downcast_ref::<langshift::Error>().is_some_and(langshift::Error::is_usage)
    });
    if usage {
        2
    } else {
        1
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let g = Globals {
        seed: cli.seed,
        format: cli.format,
    };
    match cli.command {
        Command::Mean(a) => commands::mean(&g, &a),
        Command::Shift(a) => commands::shift(&g, &a),
        Command::Retrieve(a) => commands::retrieve(&g, &a),
        Command::TranslateEval(a) => commands::translate(&g, &a),
        Command::Sweep(a) => commands::sweep(&g, &a),
        Command::Synth(a) => commands::synth(&g, &a),
        Command::Sensitivity(a) => commands::sensitivity(&g, &a),
        Command::Validate(a) => commands::validate(&g, &a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LANGSHIFT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
