mod commands;
mod config;
mod error;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::LevelFilter;

use config::PipelineConfig;
use error::{exit, CliError, CliResult, EXIT_CODE_HELP};

#[derive(Debug, Parser)]
#[command(name = "petseg", version, about = "PET/CT lesion segmentation toolkit", after_help = EXIT_CODE_HELP)]
struct Cli {
    /// Pipeline configuration (TOML); command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for all parallel work.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log verbosity on stderr: off, error, warn, info, debug, trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resample a NIfTI volume to a new voxel spacing.
    Resample(commands::volume::ResampleArgs),
    /// Apply one seeded random augmentation draw to a volume (and its mask).
    Augment(commands::volume::AugmentArgs),
    /// Sliding-window ensemble prediction on a case directory.
    Predict(commands::predict::PredictArgs),
    /// Per-case Dice, false-positive and false-negative volumes.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Leaderboard from per-team metrics.
    Rank(commands::evaluate::RankArgs),
    /// Print the layer table and parameter count of an architecture.
    DescribeModel(commands::model::DescribeArgs),
    /// Tile counts and wall time of sliding-window inference per step fraction.
    Bench(commands::model::BenchArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        cfg.threads = Some(t);
    }
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    log::debug!("threads={}", rayon::current_num_threads());
    log::debug!("effective config: {}", cfg.to_toml().trim().replace('\n', "; "));
    match cli.command {
        Command::Resample(a) => commands::volume::resample(a, &cfg),
        Command::Augment(a) => commands::volume::augment(a, &cfg),
        Command::Predict(a) => commands::predict::run(a, &cfg),
        Command::Evaluate(a) => commands::evaluate::evaluate(a, &cfg),
        Command::Rank(a) => commands::evaluate::rank(a),
        Command::DescribeModel(a) => commands::model::describe(a, &cfg),
        Command::Bench(a) => commands::model::bench(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", logging::error_line(exit::USAGE, "usage", first));
            return ExitCode::from(exit::USAGE as u8);
        }
    };
    logging::init(cli.log_level);
    // panics become a JSON error line with the internal-error code
    std::panic::set_hook(Box::new(|info| {
        let msg = info.to_string().replace('\n', " ");
        eprintln!("{}", logging::error_line(exit::INTERNAL, "internal", &msg));
    }));
    let outcome = std::panic::catch_unwind(|| run(cli));
    match outcome {
        Err(_) => ExitCode::from(exit::INTERNAL as u8),
        Ok(Ok(())) => ExitCode::from(exit::OK as u8),
        Ok(Err(e)) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}", logging::error_line(e.exit_code(), e.kind(), &msg));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
