//! `prokd`: one verb per invocation, configured by a TOML file.
//!
//! Exit status: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime failures (the message names the failing module).

mod commands;
mod export;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use prokd_core::training::TrainError;

#[derive(Parser, Debug)]
#[command(
    name = "prokd",
    version,
    about = "Zero-resource cross-lingual NER by prototypical distillation"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; created if absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Write a synthetic bilingual corpus and a config that reads it.
    GenerateData,
    /// Train the source-language teacher.
    TrainTeacher,
    /// Store the teacher's probabilities for every target training token.
    Snapshot {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train the student on a teacher snapshot.
    Distill {
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Score a checkpoint or a predictions file against target gold.
    Evaluate {
        #[arg(
            long,
            conflicts_with = "predictions",
            required_unless_present = "predictions"
        )]
        checkpoint: Option<PathBuf>,
        /// CoNLL file with one predicted tag per target test token.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Full method and the four ablations over several seeds.
    Ablate {
        /// Comma-separated seeds; defaults to five seeds from the configured one.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Keep one generated corpus for all seeds instead of one per seed.
        #[arg(long)]
        fixed_data: bool,
    },
    /// Per-language prototypes and sampled token vectors as TSV.
    ExportPrototypes {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Token vectors sampled per label and language; 0 disables.
        #[arg(long, default_value_t = 50)]
        samples: usize,
    },
    /// Exhaustive hyperparameter search, selected on source dev F1.
    GridSearch {
        /// Grid file (TOML with lambda/tau1/tau2/gamma lists).
        #[arg(long)]
        grid: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("error in module {module}: {message}")]
    Runtime {
        module: &'static str,
        message: String,
    },
}

impl CliError {
    pub fn io(context: impl std::fmt::Display, err: std::io::Error) -> Self {
        CliError::Runtime {
            module: "cli",
            message: format!("{context}: {err}"),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(m) => CliError::Usage(format!("config: {m}")),
            other => {
                let module = other.module();
                let text = other.to_string();
                let message = text
                    .strip_prefix(module)
                    .and_then(|t| t.strip_prefix(": "))
                    .unwrap_or(&text)
                    .to_string();
                CliError::Runtime { module, message }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.verb {
        Verb::GenerateData => commands::generate_data(&cli.common),
        Verb::TrainTeacher => commands::train_teacher(&cli.common),
        Verb::Snapshot { checkpoint } => commands::snapshot(&cli.common, &checkpoint),
        Verb::Distill { snapshot } => commands::distill(&cli.common, &snapshot),
        Verb::Evaluate {
            checkpoint,
            predictions,
        } => commands::evaluate(&cli.common, checkpoint.as_deref(), predictions.as_deref()),
        Verb::Ablate { seeds, fixed_data } => commands::ablate(&cli.common, &seeds, fixed_data),
        Verb::ExportPrototypes {
            checkpoint,
            samples,
        } => export::export_prototypes(&cli.common, &checkpoint, samples),
        Verb::GridSearch { grid } => commands::grid_search(&cli.common, grid.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(e @ CliError::Runtime { .. }) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
    }
}
