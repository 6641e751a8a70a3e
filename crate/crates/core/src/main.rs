//! Thin CLI over the benchmark harness. All behavior lives in the library;
//! see the crate examples for programmatic use.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spikeslab_ep::harness::{
    cmd_gridsearch, cmd_phase_transition, cmd_sample, cmd_solve, load_config, GridSearchConfig,
    PhaseTransitionConfig, SampleConfig, SolveConfig,
};

#[derive(Parser)]
#[command(
    name = "spikeslab-ep",
    about = "EP inference for spatio-temporal spike-and-slab priors",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a sample from the structure prior and write it as CSV.
    Sample {
        #[command(flatten)]
        common: Common,
    },
    /// Run EP on a problem given as CSV matrices.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Override the approximation scheme (full | lowrank:<K|frac> | cp |
        /// group:<gs>x<gt>[+cp|+lowrank:<..>]).
        #[arg(long)]
        scheme: Option<String>,
    },
    /// Evidence-based hyperparameter grid search on a synthetic instance.
    Gridsearch {
        #[command(flatten)]
        common: Common,
        /// Worker threads (reserved; grid points run sequentially).
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Undersampling-ratio sweep over conditioned synthetic instances.
    PhaseTransition {
        #[command(flatten)]
        common: Common,
        /// Worker threads for independent trials.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Override the scheme of EP methods that do not pin their own.
        #[arg(long)]
        scheme: Option<String>,
    },
}

fn run() -> spikeslab_ep::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Sample { common } => {
            let mut config: SampleConfig = load_config(&common.config)?;
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            let paths = cmd_sample(&config, &common.out)?;
            println!("wrote {}", paths.metadata.display());
        }
        Command::Solve { common, scheme } => {
            let mut config: SolveConfig = load_config(&common.config)?;
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            let dir = common
                .config
                .parent()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."));
            let paths = cmd_solve(&config, &dir, &common.out, scheme.as_deref())?;
            println!("wrote {}", paths.metadata.display());
        }
        Command::Gridsearch { common, workers: _ } => {
            let mut config: GridSearchConfig = load_config(&common.config)?;
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            let result = cmd_gridsearch(&config, &common.out)?;
            println!(
                "wrote {} ({} rows)",
                result.csv_path.display(),
                result.rows.len()
            );
        }
        Command::PhaseTransition {
            common,
            workers,
            scheme,
        } => {
            let mut config: PhaseTransitionConfig = load_config(&common.config)?;
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            if let Some(s) = scheme {
                config.ep.scheme = Some(s);
            }
            let result = cmd_phase_transition(&config, &common.out, workers)?;
            println!(
                "wrote {} ({} rows)",
                result.csv_path.display(),
                result.rows.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
