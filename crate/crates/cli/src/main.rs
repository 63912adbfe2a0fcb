mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Train, sample and evaluate co-evolving diffusion models for tabular data.
#[derive(Parser, Debug)]
#[command(name = "codi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ToyKind {
    /// Four circles with 16 colour sectors (x, y, color, circle).
    Circles,
    /// Six categorical columns correlated through a hidden class.
    Latent,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and its schema file.
    Toy {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Schema file to write (defaults to `<out>.schema.json`).
        #[arg(long)]
        schema_out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ToyKind::Circles)]
        kind: ToyKind,
    },
    /// Train a model on a CSV file.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path; a manifest and loss log are written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        timesteps: Option<usize>,
        #[arg(long)]
        beta_start: Option<f64>,
        #[arg(long)]
        beta_end: Option<f64>,
    },
    /// Generate rows from a checkpoint.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare synthetic rows with real ones.
    Eval {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// `real` (neighbourhoods of real rows) or `fake`.
        #[arg(long, default_value = "real")]
        coverage_direction: String,
        /// Threshold such as `coverage>=0.6`; repeatable. Failing any exits with 3.
        #[arg(long = "assert")]
        asserts: Vec<String>,
        /// JSON report path (defaults to `<fake>.report.json`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Histogram counts CSV path (defaults to `<fake>.hist.csv`).
        #[arg(long)]
        histograms: Option<PathBuf>,
    },
    /// Compare discrete-space and continuous-space generation on a categorical table.
    AblateSpace {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Rows generated per variant (defaults to the table size).
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
