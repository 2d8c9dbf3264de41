use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smoother_harness::commands::{cmd_assimilate, cmd_diagnose, cmd_generate_truth, cmd_observe, cmd_tune_step};
use smoother_harness::{CliError, CliResult, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "hmcsmoother", version, about = "HMC sampling smoother twin experiments")]
struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output root of the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Assimilation mode for `assimilate` and `tune-step`.
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Writes the true initial state, its trajectory and the background.
    GenerateTruth,
    /// Synthesizes noisy observations of the truth.
    Observe,
    /// Runs 4D-Var or one of the HMC smoothers.
    Assimilate,
    /// Compares assimilation runs against the truth and each other.
    Diagnose {
        /// Run directories; the first ensemble run is the reference.
        runs: Vec<PathBuf>,
    },
    /// Searches the step size for a target rejection rate.
    TuneStep,
}

fn run(cli: Cli) -> CliResult<()> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("missing --config".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output = out;
    }
    let out = cfg.output.clone();
    let need_mode = || cli.mode.ok_or_else(|| CliError::Config("missing --mode".into()));
    let manifest = match cli.command {
        Command::GenerateTruth => cmd_generate_truth(&cfg, &out)?,
        Command::Observe => cmd_observe(&cfg, &out)?,
        Command::Assimilate => cmd_assimilate(&cfg, &out, need_mode()?)?,
        Command::Diagnose { runs } => cmd_diagnose(&cfg, &out, &runs)?,
        Command::TuneStep => cmd_tune_step(&cfg, &out, need_mode()?)?,
    };
    for f in &manifest.files {
        println!("{}  {}", f.sha256, f.path);
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
