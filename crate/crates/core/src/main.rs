//! `stirflow` command-line interface: run named experiments from a JSON
//! configuration and/or command-line flags.
//!
//! Exit codes: 0 when every targeted check passes, 1 when some check
//! fails, 2 on configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stirflow::error::Error;
use stirflow::harness::{run_experiment, ExperimentConfig, ExperimentKind, ALL_EXPERIMENTS};

#[derive(Parser)]
#[command(
    name = "stirflow",
    version,
    about = "Interacting particle systems, branching-walk duals, and sharp-interface fronts",
    after_help = "Examples:\n  stirflow check-g\n  stirflow duality-check --seed 7\n  stirflow --config run.json --trials 5000 --out results/"
)]
struct Cli {
    /// JSON experiment configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed override (required for stochastic experiments).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trial-count override.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Output directory (default: $STIRFLOW_OUT, then ./stirflow-out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Experiment name, as an alternative to a subcommand.
    #[arg(long, value_name = "NAME")]
    experiment: Option<String>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Admissibility conditions for the reference voting functions.
    CheckG,
    /// Iteration counts toward the stable fixed points across ε.
    Iterate,
    /// 1-D branching-walk interface profile with step initial data.
    BbmInterface,
    /// Dual-vote marginal on the torus from a product initial law.
    DualVote,
    /// Forward lattice simulation with grid dumps and event log.
    Forward,
    /// Forward-vs-dual marginal comparison at probe sites.
    DualityCheck,
    /// Dual collision-probability sweep across the stirring rate.
    Collisions,
    /// Walk-vs-Brownian coupling diagnostics.
    Coupling,
    /// 1-D front speeds against the exact integral-sign rule.
    PdeFront,
    /// 2-D shrinking circle against the fine radial oracle.
    PdeCircle,
    /// Signed-distance regularity identities for reference flows.
    McfCheck,
    /// Empirical family-partition law of five coalescing walks.
    PartitionLaw,
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::CheckG => ExperimentKind::CheckG,
            Command::Iterate => ExperimentKind::Iterate,
            Command::BbmInterface => ExperimentKind::BbmInterface,
            Command::DualVote => ExperimentKind::DualVote,
            Command::Forward => ExperimentKind::Forward,
            Command::DualityCheck => ExperimentKind::DualityCheck,
            Command::Collisions => ExperimentKind::Collisions,
            Command::Coupling => ExperimentKind::Coupling,
            Command::PdeFront => ExperimentKind::PdeFront,
            Command::PdeCircle => ExperimentKind::PdeCircle,
            Command::McfCheck => ExperimentKind::McfCheck,
            Command::PartitionLaw => ExperimentKind::PartitionLaw,
        }
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::ConfigError(format!("cannot read configuration {path:?}: {e}"))
            })?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    // Subcommand beats --experiment beats the config file.
    if let Some(cmd) = &cli.command {
        config.experiment = Some(cmd.kind());
    } else if let Some(name) = &cli.experiment {
        config.experiment = Some(ExperimentKind::from_name(name)?);
    }
    if config.experiment.is_none() {
        let valid: Vec<&str> = ALL_EXPERIMENTS.iter().map(|k| k.name()).collect();
        return Err(Error::ConfigError(format!(
            "no experiment selected; pass a subcommand, --experiment, or a config file \
             with an \"experiment\" field (one of {})",
            valid.join(", ")
        )));
    }
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if cli.trials.is_some() {
        config.trials = cli.trials;
    }
    if cli.out.is_some() {
        config.output_dir = cli.out.clone();
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&config) {
        Ok(report) => {
            for line in &report.summary {
                println!(
                    "{} {} measured={} bound={}",
                    line.id,
                    if line.pass { "pass" } else { "fail" },
                    line.measured,
                    line.bound
                );
            }
            println!("wrote {}", report.output_dir.display());
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ Error::ConfigError(_)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("experiment failed: {e}");
            ExitCode::from(1)
        }
    }
}
