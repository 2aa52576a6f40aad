//! The `hypertopic` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or
//! validation error, 4 numerical abort.

mod commands;
mod params;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hypertopic_core::Error as CoreError;

pub use params::HyperParams;

use crate::io::DATA_ENV;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "hypertopic", version, about = "Hyperbolic embedded topic models with optional taxonomy guidance")]
pub struct Cli {
    /// Directory searched for corpus and file names that do not exist as given
    #[arg(long, global = true, env = DATA_ENV, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// More log output (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a corpus directory and print its statistics as JSON
    Ingest(IngestArgs),
    /// Build a taxonomy JSON file from hypernym paths
    BuildTaxonomy(BuildTaxonomyArgs),
    /// Train a model, writing checkpoints and a JSON-lines log
    Train(TrainArgs),
    /// Compute the metric report for a checkpoint
    Eval(EvalArgs),
    /// Write the top words of every topic as TSV
    Topics(TopicsArgs),
    /// Write word and topic coordinates as TSV
    ExportEmbeddings(ExportArgs),
    /// Train and evaluate once per contrastive weight and tabulate the results
    SweepLambda(SweepArgs),
    /// Write a planted two-layer corpus and its hypernym paths
    Synthesize(SynthesizeArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Corpus directory (vocab.txt, docs.txt, optional splits.txt and labels.txt)
    #[arg(long)]
    pub corpus: PathBuf,
    /// Also validate this taxonomy JSON against the vocabulary
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BuildTaxonomyArgs {
    /// Hypernym paths file: `word<TAB>concept>...>root` per line
    #[arg(long)]
    pub paths: PathBuf,
    /// Corpus directory whose vocabulary the leaves refer to
    #[arg(long)]
    pub corpus: PathBuf,
    /// Concept layers to keep, counted from the root
    #[arg(long)]
    pub depth: usize,
    /// Output taxonomy JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus directory
    #[arg(long)]
    pub corpus: PathBuf,
    /// Run directory; receives `checkpoint/` and `train.jsonl`
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with hyperparameters (keys as the flag names with underscores); flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use this taxonomy for the contrastive term and take the topic counts from its layers
    #[arg(long, conflicts_with_all = ["taxonomy", "no_taxonomy"])]
    pub layers_from_taxonomy: Option<PathBuf>,
    /// Use this taxonomy for the contrastive term; --topics must match its layers
    #[arg(long, conflicts_with = "no_taxonomy")]
    pub taxonomy: Option<PathBuf>,
    /// Train without a taxonomy
    #[arg(long)]
    pub no_taxonomy: bool,
    /// Continue from the checkpoint in the run directory; only --epochs may change
    #[arg(long)]
    pub resume: bool,
    /// Save a checkpoint every this many epochs (project default)
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
    #[command(flatten)]
    pub params: HyperParams,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory or run directory
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus directory (reference collection and labels)
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output JSON file [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip k-means purity and NMI
    #[arg(long)]
    pub no_clustering: bool,
    /// Skip the linear classifier
    #[arg(long)]
    pub no_classification: bool,
    /// Seed for k-means and the classifier [default: the training seed] (project default)
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TopicsArgs {
    /// Checkpoint directory or run directory
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus directory providing the vocabulary
    #[arg(long)]
    pub corpus: PathBuf,
    /// Words per topic (published setting)
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Output TSV [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// Checkpoint directory or run directory
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus directory providing the vocabulary
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output TSV [default: stdout]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Corpus directory
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory receiving one run per weight and `sweep.tsv`
    #[arg(long)]
    pub out: PathBuf,
    /// Contrastive weights to try, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Taxonomy for the contrastive term; topic counts follow its layers unless --topics is given
    #[arg(long)]
    pub layers_from_taxonomy: PathBuf,
    #[command(flatten)]
    pub params: HyperParams,
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    /// Output corpus directory; `hypernyms.txt` is written alongside the corpus files
    #[arg(long)]
    pub out: PathBuf,
    /// Vocabulary size (project default)
    #[arg(long, default_value_t = 300)]
    pub vocab: usize,
    /// Documents (project default)
    #[arg(long, default_value_t = 2000)]
    pub docs: usize,
    /// Generator seed (project default)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Maps an error chain to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::NonFinite { .. } => EXIT_NUMERIC,
                CoreError::Config(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match commands::dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
