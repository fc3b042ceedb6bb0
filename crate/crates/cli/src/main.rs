//! `npnet`: train, evaluate and inspect nonparametric networks.

mod config;
mod data;
mod eval;
mod gradcheck;
mod inspect;
mod train;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Exit status 2 for usage and configuration errors, 1 for failures at run time.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<npnet::Error> for CliError {
    fn from(e: npnet::Error) -> Self {
        match e {
            npnet::Error::Config { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(
    name = "npnet",
    version,
    about = "Nonparametric neural networks: train, evaluate, inspect"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network as described by a configuration file.
    Train {
        /// TOML file with training and data keys.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run with the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Epochs between checkpoints.
        #[arg(long, default_value_t = 1)]
        checkpoint_every: u64,
        /// Do not print a line per epoch.
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a saved model.
    Eval {
        /// Model file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Evaluate on a split of the data described by this configuration.
        #[arg(long, conflicts_with_all = ["idx_images", "csv", "amat"])]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = eval::SplitName::Valid, requires = "config")]
        split: eval::SplitName,
        /// Seed used to split the data; defaults to the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// IDX image file; labels come from --idx-labels.
        #[arg(long, requires = "idx_labels")]
        idx_images: Option<PathBuf>,
        #[arg(long)]
        idx_labels: Option<PathBuf>,
        /// CSV file with numeric features and an integer label column.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Zero-based label column; defaults to the last column.
        #[arg(long, requires = "csv")]
        label_column: Option<usize>,
        /// The CSV file has a header row.
        #[arg(long, requires = "csv")]
        header: bool,
        /// Whitespace-separated file with the label in the last column.
        #[arg(long)]
        amat: Option<PathBuf>,
        /// Print a JSON object instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Compare analytic gradients with central finite differences on random networks.
    Gradcheck {
        /// Take the depth and normalization from this configuration; otherwise all
        /// normalization modes are cycled.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of random networks.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print a JSON object instead of text.
        #[arg(long)]
        json: bool,
        /// Perturbs the analytic gradient; the check must then fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Emit CSV series from the outputs of a training run.
    Inspect {
        /// Run directory, or the metrics.csv inside it.
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, value_enum)]
        emit: Emit,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Emit {
    Sizes,
    Norms,
    Lifetimes,
}

/// `NPNET_THREADS`: 0 (the default) evaluates sequentially; otherwise sizes the thread pool.
fn configure_threads() -> Result<bool, CliError> {
    let threads = match std::env::var("NPNET_THREADS") {
        Err(_) => 0,
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("NPNET_THREADS must be a non-negative integer, got `{v}`")))?,
    };
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(threads > 0)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let parallel = configure_threads()?;
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            resume,
            checkpoint_every,
            quiet,
        } => train::cmd_train(train::TrainArgs {
            config,
            seed,
            out,
            resume,
            checkpoint_every,
            quiet,
            parallel,
        }),
        Command::Eval {
            model,
            config,
            split,
            seed,
            idx_images,
            idx_labels,
            csv,
            label_column,
            header,
            amat,
            json,
        } => {
            let source = match (config, idx_images, csv, amat) {
                (Some(c), None, None, None) => eval::Source::Config { path: c, split, seed },
                (None, Some(images), None, None) => eval::Source::Idx {
                    images,
                    labels: idx_labels.expect("required by clap"),
                },
                (None, None, Some(path), None) => eval::Source::Csv {
                    path,
                    label_column,
                    header,
                },
                (None, None, None, Some(path)) => eval::Source::Amat { path },
                _ => {
                    return Err(CliError::Usage(
                        "give exactly one of --config, --idx-images/--idx-labels, --csv or --amat".into(),
                    ))
                }
            };
            eval::cmd_eval(&model, source, json, parallel)
        }
        Command::Gradcheck {
            config,
            trials,
            seed,
            json,
            inject_fault,
        } => gradcheck::cmd_gradcheck(config.as_deref(), trials, seed, json, inject_fault),
        Command::Inspect { metrics, emit, out } => inspect::cmd_inspect(&metrics, emit, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Runtime(_) => 1,
            })
        }
    }
}
