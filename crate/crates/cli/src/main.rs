use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use topopi_cli::commands::{self, parse_level, source_from_flags, with_threads};
use topopi_cli::{CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "topopi", version, about = "Persistence diagrams, persistence images and surrogate networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct DataFlags {
    #[arg(long)]
    input: PathBuf,
    /// signal-csv, image-csv or cifar
    #[arg(long)]
    format: String,
    /// Per-sample shape, e.g. 250x3 or 32x32x3 (implied for cifar)
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    output: PathBuf,
    /// Worker threads (0 = one per core)
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write one persistence diagram per sample and channel
    Pd {
        #[command(flatten)]
        data: DataFlags,
        /// Image parameter preset: signal, cifar or svhn
        #[arg(long)]
        spec: Option<String>,
    },
    /// Write one persistence image per sample
    Pi {
        #[command(flatten)]
        data: DataFlags,
        #[arg(long)]
        spec: Option<String>,
    },
    /// Train a model from a run configuration
    Train { config: PathBuf },
    /// Fine-tune saved weights on a target dataset
    Finetune { config: PathBuf },
    /// Predict persistence images or class scores
    Infer { config: PathBuf },
    /// Score a model, optionally under Gaussian noise
    Eval { config: PathBuf },
    /// Time analytic persistence images against a surrogate
    Bench { config: PathBuf },
    /// Write a Gaussian-corrupted copy of an image dataset
    Corrupt {
        #[command(flatten)]
        data: DataFlags,
        /// L1, L2, L3 or L4
        #[arg(long)]
        level: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a seeded synthetic dataset
    Synth {
        /// signal-csv, image-csv or cifar
        #[arg(long)]
        format: String,
        #[arg(long)]
        shape: Option<String>,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

fn report(r: &topopi_cli::Report) -> String {
    r.to_text()
}

fn run(cmd: Command) -> CliResult<String> {
    match cmd {
        Command::Pd { data, spec } => {
            let src = source_from_flags(&data.format, data.shape.as_deref())?;
            commands::path_must_exist(&data.input)?;
            let n = with_threads(data.threads, || commands::pd(&src, &data.input, spec.as_deref(), &data.output))?;
            Ok(format!("wrote {n} diagrams to {}\n", data.output.display()))
        }
        Command::Pi { data, spec } => {
            let src = source_from_flags(&data.format, data.shape.as_deref())?;
            commands::path_must_exist(&data.input)?;
            let n = with_threads(data.threads, || commands::pi(&src, &data.input, spec.as_deref(), &data.output))?;
            Ok(format!("wrote {n} persistence images to {}\n", data.output.display()))
        }
        Command::Train { config } => Ok(report(&commands::train(&RunConfig::load(&config)?)?)),
        Command::Finetune { config } => Ok(report(&commands::finetune(&RunConfig::load(&config)?)?)),
        Command::Infer { config } => Ok(report(&commands::infer(&RunConfig::load(&config)?)?)),
        Command::Eval { config } => Ok(report(&commands::eval(&RunConfig::load(&config)?)?)),
        Command::Bench { config } => Ok(commands::bench(&RunConfig::load(&config)?)?.to_csv()),
        Command::Corrupt { data, level, seed } => {
            let src = source_from_flags(&data.format, data.shape.as_deref())?;
            let level = parse_level(&level)?;
            commands::path_must_exist(&data.input)?;
            let n = with_threads(data.threads, || commands::corrupt(&src, &data.input, level, seed, &data.output))?;
            Ok(format!("wrote {n} corrupted samples to {}\n", data.output.display()))
        }
        Command::Synth { format, shape, count, classes, seed, output } => {
            let src = source_from_flags(&format, shape.as_deref())?;
            let n = commands::synth(&src, count, classes, seed, &output)?;
            Ok(format!("wrote {n} samples to {}\n", output.display()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(msg) => {
            print!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
