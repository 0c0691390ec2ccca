//! `beamfix` command-line driver.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on invalid input or
//! configuration.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::config::RunConfig;

/// Invalid input or configuration detected before any work is done.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(
    name = "beamfix",
    version,
    about = "Characterize and denoise GPS positions with camera detections and mmWave beams"
)]
struct Cli {
    /// Run seed, overriding the `seed` field of the config file
    #[arg(long, global = true, env = "BEAMFIX_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a clean and one noisy dataset per noise level for each direction
    Simulate {
        /// JSON run configuration; built-in defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory [default: `output_dir` of the config, beamfix-out]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-grid displacement table, histogram and Gaussian fit of datasets
    Characterize {
        /// Dataset CSV files
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        /// Number of image grids
        #[arg(long, default_value_t = 100)]
        grid_count: usize,
        /// Histogram bin width in meters
        #[arg(long, default_value_t = 0.05)]
        bin_width: f64,
        /// Also write each sample's displacement to its grid mean
        #[arg(long)]
        per_sample: bool,
        #[arg(long, default_value = "characterize")]
        out: PathBuf,
    },
    /// Split a dataset, train both stages and build the lookup table
    Train {
        /// Dataset CSV file
        dataset: PathBuf,
        /// JSON run configuration; built-in defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Reuse the split and hyperparameters recorded in an earlier manifest
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        /// Models are written to `<out>/<dataset stem>/`
        #[arg(long, default_value = "models")]
        out: PathBuf,
    },
    /// Score noisy, lookup-table and regression positions on the test split
    Evaluate {
        /// Dataset CSV files, one per noise level
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        /// Directory given as `--out` to `train`
        #[arg(long, default_value = "models")]
        models: PathBuf,
        /// Histogram bin width in meters for the exported plot data
        #[arg(long, default_value_t = 0.05)]
        bin_width: f64,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Run simulate, characterize, train and evaluate in one go
    Pipeline {
        /// JSON run configuration; built-in defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory [default: `output_dir` of the config, beamfix-out]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path.map(PathBuf::as_path))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_comparisons(
    comparisons: &std::collections::BTreeMap<
        beamfix_core::Direction,
        beamfix_core::eval::Comparison,
    >,
) {
    for (direction, c) in comparisons {
        println!("\n{} overall per-grid error (m)", direction.as_str());
        print!("{}", c.to_text_table());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            for (path, rows) in commands::simulate(&cfg, &out)? {
                println!("{}\t{rows}", path.display());
            }
        }
        Command::Characterize {
            datasets,
            grid_count,
            bin_width,
            per_sample,
            out,
        } => {
            for dataset in &datasets {
                let summary =
                    commands::characterize(dataset, grid_count, bin_width, &out, per_sample)?;
                commands::print_fit(&summary);
            }
        }
        Command::Train {
            dataset,
            config,
            manifest,
            out,
        } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            let replay = manifest
                .as_deref()
                .map(commands::TrainManifest::load)
                .transpose()?;
            let m = commands::train(&dataset, &cfg, replay.as_ref(), &out)?;
            commands::print_training(&m);
        }
        Command::Evaluate {
            datasets,
            models,
            bin_width,
            out,
        } => {
            if !(bin_width > 0.0 && bin_width.is_finite()) {
                return Err(
                    UsageError(format!("bin width must be positive, got {bin_width}")).into(),
                );
            }
            print_comparisons(&commands::evaluate(&datasets, &models, bin_width, &out)?);
        }
        Command::Pipeline { config, out } => {
            let cfg = load_config(config.as_ref(), cli.seed)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            print_comparisons(&commands::pipeline(&cfg, &out)?);
        }
    }
    Ok(())
}

/// 2 for input and configuration problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<beamfix_core::Error>() {
            return if e.is_validation() { 2 } else { 1 };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
