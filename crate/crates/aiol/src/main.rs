use std::path::PathBuf;
use std::process::ExitCode;

use aiol::commands::{self, CliError};
use aiol::config::ExperimentConfig;
use clap::{Parser, Subcommand};

/// OOD detection with few labels and mixed unlabeled data: dataset
/// generation, two-stage entropy training, evaluation, temperature-gap
/// verification, and ablation sweeps.
#[derive(Parser)]
#[command(name = "aiol", version)]
struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for generated files
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the config's seed list, e.g. --seed 0,1,2
    #[arg(long, global = true, value_delimiter = ',')]
    seed: Option<Vec<u64>>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic CSV splits (L, U, V, and the three test sets)
    GenData,
    /// Train one model per seed; writes traces, checkpoints, and a report
    Train {
        /// Load splits from this directory instead of generating in memory
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test splits
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Load splits from this directory instead of generating in memory
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Check the confidence-gap monotonicity claims on score pairs
    VerifyTheorem {
        /// Explicit pair "S_IN,S_OUT" with 0.5 < S_OUT < S_IN < 1 (repeatable)
        #[arg(long = "pair")]
        pairs: Vec<String>,
        /// Additionally sweep N random pairs
        #[arg(long)]
        random: Option<usize>,
        #[arg(long, default_value_t = 10.0)]
        t_max: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
    /// Run a matched group of configurations and compare metrics
    Ablate {
        /// One of: temperature, thresholds, mixup, modules
        #[arg(long)]
        id: String,
    },
}

fn parse_pair(s: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    let err = || CliError::Config(format!("invalid --pair `{s}` (expected S_IN,S_OUT)"));
    if parts.len() != 2 {
        return Err(err());
    }
    let s_in: f64 = parts[0].trim().parse().map_err(|_| err())?;
    let s_out: f64 = parts[1].trim().parse().map_err(|_| err())?;
    Ok((s_in, s_out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => {
            ExperimentConfig::load(path).map_err(|e| CliError::Config(format!("{e:#}")))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seeds) = cli.seed {
        if seeds.is_empty() {
            return Err(CliError::Config("--seed list must be nonempty".into()));
        }
        config.seeds = seeds;
    }

    match cli.command {
        Command::GenData => commands::cmd_gen_data(&config, &cli.out),
        Command::Train { data } => commands::cmd_train(&config, &cli.out, data.as_deref()),
        Command::Eval { checkpoint, data } => {
            commands::cmd_eval(&config, &cli.out, &checkpoint, data.as_deref())
        }
        Command::VerifyTheorem {
            pairs,
            random,
            t_max,
            step,
        } => {
            let explicit: Vec<(f64, f64)> = pairs
                .iter()
                .map(|p| parse_pair(p))
                .collect::<Result<_, _>>()?;
            commands::cmd_verify_theorem(&cli.out, &explicit, random, t_max, step)
        }
        Command::Ablate { id } => commands::cmd_ablate(&config, &cli.out, &id),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
