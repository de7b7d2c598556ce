//! Barcode-calling pipeline CLI: simulate a synthetic well, extract noisy
//! annotations, train the base caller by codebook-constrained
//! self-training, decode, call cells, and evaluate.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod ablate;
mod config;
mod error;
mod exec;
mod io;
mod render;
mod stages;

use config::{Overrides, Quality, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "plepi",
    about = "Codebook-constrained barcode calling on synthetic sequencing wells",
    version
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "plepi.toml")]
    config: PathBuf,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count override (1 = serial reference mode).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Self-training round count override.
    #[arg(long, global = true)]
    rounds: Option<usize>,
    /// Annotation quality override.
    #[arg(long, global = true, value_enum)]
    quality: Option<Quality>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic well: manifest, tiles, reference abundance.
    Simulate,
    /// Extract noisy detections and the corrupted labeled set.
    Annotate,
    /// Supervised burn-in of teacher and student on the labeled set.
    Burnin,
    /// Self-training rounds over the unlabeled fields.
    Train,
    /// Decode the test fields with the trained teacher.
    Decode {
        /// Model checkpoint to decode with (default: trained teacher,
        /// falling back to the burn-in teacher).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Assign each test cell its highest-confidence barcode.
    CallCells,
    /// Compute the metric suite against ground truth.
    Evaluate,
    /// Render the text report and SVG plots.
    Report,
    /// Run every stage end to end.
    Pipeline,
    /// Run the strategy x quality ablation grid.
    Ablate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        threads: cli.threads,
        rounds: cli.rounds,
        quality: cli.quality,
        out: cli.out,
    };
    let cfg = RunConfig::load(&cli.config, &overrides)?;
    match cli.command {
        Command::Simulate => {
            stages::cmd_simulate(&cfg)?;
        }
        Command::Annotate => stages::cmd_annotate(&cfg)?,
        Command::Burnin => stages::cmd_burnin(&cfg)?,
        Command::Train => stages::cmd_train(&cfg)?,
        Command::Decode { model } => {
            stages::cmd_decode(&cfg, model.as_deref())?;
        }
        Command::CallCells => {
            stages::cmd_call_cells(&cfg)?;
        }
        Command::Evaluate => {
            stages::cmd_evaluate(&cfg)?;
        }
        Command::Report => stages::cmd_report(&cfg)?,
        Command::Pipeline => {
            stages::cmd_pipeline(&cfg)?;
        }
        Command::Ablate => {
            ablate::cmd_ablate(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
