//! `causatext` — train cause classifiers, explain their predictions, and
//! score the explanations against human rationales.

mod commands;
mod pipeline;
mod records;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use causatext_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "causatext",
    version,
    about = "Cause classification with token-level explanations validated against human rationales"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON file whose keys (snake_case flag names) override parsed flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Cap worker threads for parallel stages (0 = auto).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Split a labeled dataset into train/validation/test JSONL files.
    Prepare(commands::PrepareArgs),
    /// Train one classifier architecture over pretrained embeddings.
    Train(commands::TrainArgs),
    /// Evaluate a trained model: per-class F1, accuracy, confusion matrix.
    Evaluate(commands::EvaluateArgs),
    /// Produce token-level attributions (LIME or integrated gradients).
    Explain(commands::ExplainArgs),
    /// Score explanations against human rationales (cosine or WMD).
    Similarity(commands::SimilarityArgs),
    /// Aggregate scores into per-class tables and the consistency analysis.
    Report(commands::ReportArgs),
    /// Run every phase end to end from one seed.
    Pipeline(pipeline::PipelineArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Prepare(_) => "prepare",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Explain(_) => "explain",
            Command::Similarity(_) => "similarity",
            Command::Report(_) => "report",
            Command::Pipeline(_) => "pipeline",
        }
    }
}

/// Overlay `--config` JSON onto parsed args: any key present in the file
/// replaces the corresponding flag value.
fn overlay<T: Serialize + DeserializeOwned>(args: &T, config: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let overrides: serde_json::Value = serde_json::from_str(&raw)?;
    let obj = overrides
        .as_object()
        .ok_or_else(|| Error::schema("config file must hold a JSON object"))?;
    let mut base = serde_json::to_value(args)?;
    let base_obj = base
        .as_object_mut()
        .expect("flag structs serialize to objects");
    for (k, v) in obj {
        if !base_obj.contains_key(k) {
            return Err(Error::schema(format!(
                "config key {k:?} is not a flag of this subcommand"
            )));
        }
        base_obj.insert(k.clone(), v.clone());
    }
    Ok(serde_json::from_value(base)?)
}

fn run(command: &Command, config: Option<&Path>) -> Result<()> {
    macro_rules! with_config {
        ($args:expr, $f:expr) => {{
            match config {
                Some(path) => $f(&overlay($args, path)?),
                None => $f($args),
            }
        }};
    }
    match command {
        Command::Prepare(a) => with_config!(a, commands::prepare),
        Command::Train(a) => with_config!(a, commands::train),
        Command::Evaluate(a) => with_config!(a, commands::evaluate),
        Command::Explain(a) => with_config!(a, commands::explain),
        Command::Similarity(a) => with_config!(a, commands::similarity),
        Command::Report(a) => with_config!(a, commands::report),
        Command::Pipeline(a) => with_config!(a, pipeline::pipeline),
    }
}

/// Distinct exit codes per failure category: 2 usage (from clap), 3 missing
/// file / IO, 4 schema or data violation, 5 numeric failure.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => 3,
        Error::Csv(_)
        | Error::Json(_)
        | Error::Schema { .. }
        | Error::EmbeddingParse { .. }
        | Error::Dimension(_)
        | Error::EmptyInput(_)
        | Error::IndexOutOfRange { .. }
        | Error::UnsupportedArch(_)
        | Error::ModelFormat { .. } => 4,
        Error::Numeric(_) | Error::NoConvergence { .. } => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build();
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("causatext: cannot build worker pool: {e}");
            return ExitCode::from(1);
        }
    };
    let stage = cli.command.name();
    match pool.install(|| run(&cli.command, cli.config.as_deref())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("causatext {stage}: error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
