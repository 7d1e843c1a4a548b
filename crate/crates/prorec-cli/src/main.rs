//! `prorec` — experiment driver for the transport-based denoising pipeline.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::Invocation;
use crate::config::{load_config, ConfigReadError};

#[derive(Parser)]
#[command(
    name = "prorec",
    version,
    about = "Denoise implicit feedback with optimal transport and evaluate the result",
    propagate_version = true
)]
struct Cli {
    /// TOML experiment config; omitted means built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the model seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Size of the global thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Artifact format: json always; csv adds CSV copies of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Materialize the configured dataset as TSV plus a summary.
    Ingest,
    /// Split interactions into train/test or train/val/test folds.
    Split,
    /// Inject false-positive interactions and record them in a ledger.
    InjectNoise,
    /// Run the full pipeline: factorize, transport, relabel, blend, evaluate.
    Run,
    /// Grid-search gamma/lambda/beta, ranking points by validation NDCG@5.
    Sweep,
    /// Compare denoised vs plain training across noise levels and seeds.
    NoiseExperiment {
        /// Comma-separated noise ratios in (0, 1).
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.05, 0.1, 0.15, 0.2])]
        levels: Vec<f64>,
        /// Seeds (repetitions) per level.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// Extract per-interaction rows for selected users from a finished run.
    ExportCase {
        /// Comma-separated external user IDs.
        #[arg(long, value_delimiter = ',')]
        users: Vec<String>,
    },
}

/// Maps an error chain to the documented exit codes.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigReadError>().is_some()
            || cause.downcast_ref::<toml::de::Error>().is_some()
            || cause.downcast_ref::<clap::Error>().is_some()
        {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<prorec::Error>() {
            return match e.category() {
                prorec::ErrorCategory::Config => 1,
                prorec::ErrorCategory::Data => 2,
                prorec::ErrorCategory::Numerical => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| {
                prorec::Error::InvalidArgument(format!("cannot size thread pool: {e}"))
            })?;
    }
    let inv = Invocation {
        config: load_config(cli.config.as_deref())?,
        out: cli.out,
        seed_override: cli.seed,
        csv: cli.format == Format::Csv,
    };
    match cli.command {
        Command::Ingest => commands::cmd_ingest(&inv),
        Command::Split => commands::cmd_split(&inv),
        Command::InjectNoise => commands::cmd_inject_noise(&inv),
        Command::Run => commands::cmd_run(&inv),
        Command::Sweep => commands::cmd_sweep(&inv),
        Command::NoiseExperiment { levels, seeds } => {
            commands::cmd_noise_experiment(&inv, &levels, seeds)
        }
        Command::ExportCase { users } => commands::cmd_export_case(&inv, &users),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
