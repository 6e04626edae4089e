//! `imore`: dataset generation, training, evaluation, tracing and checks.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use imore::dataset::{DatasetError, Split};
use imore::diff::DiffError;
use imore::model::{ModelError, RunScore};
use imore::motion::MotionError;
use imore::train::{InferenceMode, ProgramSource, TrainError};

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_VALIDATION: u8 = 5;
pub const EXIT_DIVERGENCE: u8 = 6;

/// An error that carries its process exit code.
#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub message: String,
}

impl Coded {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Coded { code, message: message.into() }
    }
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

#[derive(Parser)]
#[command(name = "imore", version, about = "Program-guided question answering over skeleton motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize motions and generate a question dataset.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Re-execute every stored program and compare with the stored answer.
    Oracle {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a model; writes the checkpoint and a loss-curve CSV next to it.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "out-ckpt")]
        out_ckpt: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint; writes the report and the majority baseline.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long, default_value = "I")]
        mode: InferenceMode,
        /// gold, predicted or corrupted:RATE
        #[arg(long, default_value = "gold")]
        programs: ProgramSource,
        /// Output directory for report files.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long = "run-score", default_value = "max_logit", value_parser = parse_run_score)]
        run_score: RunScore,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Export the attention trace of one example.
    Trace {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "example-id")]
        example_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the model gradients.
    Gradcheck {
        /// Comma-separated `key=value` model sizes: d, blocks, heads, window, patch.
        #[arg(long, default_value = "d=16")]
        dims: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 24)]
        samples: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Train every ablation variant over several seeds and compare.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated training seeds (at least 3).
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated variant names; all by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::from_name(s).ok_or_else(|| format!("unknown split `{s}` (expected train, val or test)"))
}

fn parse_run_score(s: &str) -> Result<RunScore, String> {
    match s {
        "max_logit" => Ok(RunScore::MaxLogit),
        "max_prob" => Ok(RunScore::MaxProb),
        _ => Err(format!("unknown run score `{s}` (expected max_logit or max_prob)")),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Gen { config, seed, out, workers } => commands::gen(config.as_deref(), seed, &out, workers),
        Command::Oracle { data } => commands::oracle(&data),
        Command::Train { data, config, out_ckpt, seed } => commands::train(&data, config.as_deref(), &out_ckpt, seed),
        Command::Eval { ckpt, data, split, mode, programs, report, runs, run_score, seed, workers } => {
            let opts = commands::EvalArgs { split, mode, programs, runs, run_score, seed, workers };
            commands::eval(&ckpt, &data, &report, opts)
        }
        Command::Trace { ckpt, data, example_id, out } => commands::trace(&ckpt, &data, &example_id, &out),
        Command::Gradcheck { dims, seed, samples, tol } => commands::gradcheck(&dims, seed, samples, tol),
        Command::Ablate { data, seeds, config, variants, out, workers } => {
            commands::ablate(&data, &seeds, config.as_deref(), &variants, out.as_deref(), workers)
        }
    }
}

/// Exit code for an error chain: the first recognizable cause decides.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            match e {
                TrainError::Divergence { .. } => return EXIT_DIVERGENCE,
                TrainError::Config(_) => return EXIT_CONFIG,
                TrainError::Io { .. } | TrainError::MissingMotion(_) => return EXIT_IO,
                TrainError::EmptySplit(_) => return EXIT_VALIDATION,
                _ => continue,
            }
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            match e {
                ModelError::Config(_) => return EXIT_CONFIG,
                ModelError::Meta(_) => return EXIT_IO,
                _ => continue,
            }
        }
        if let Some(e) = cause.downcast_ref::<DiffError>() {
            match e {
                DiffError::Io { .. } | DiffError::Checkpoint(_) => return EXIT_IO,
                _ => continue,
            }
        }
        if let Some(e) = cause.downcast_ref::<DatasetError>() {
            match e {
                DatasetError::Io { .. } | DatasetError::Schema(_) | DatasetError::Program { .. } => return EXIT_IO,
                DatasetError::QuotaUnreachable(_) => return EXIT_CONFIG,
                DatasetError::Invariant(_) => return EXIT_VALIDATION,
                DatasetError::Motion(_) => continue,
            }
        }
        if let Some(e) = cause.downcast_ref::<MotionError>() {
            match e {
                MotionError::Config(_) => return EXIT_CONFIG,
                MotionError::Io { .. } | MotionError::Format(_) => return EXIT_IO,
                MotionError::Invalid(_) => return EXIT_VALIDATION,
            }
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_OTHER
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
