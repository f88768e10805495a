use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedsim::experiment::{self, ExperimentConfig};

/// Federated-learning simulator with spatially correlated data partitioning
/// and metadata-driven client selection.
#[derive(Parser)]
#[command(name = "fedsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the spatial partition of a config and write it as JSON plus a
    /// human-readable summary.
    Partition {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the world seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every policy x repeat arm of the experiment, writing metric CSVs,
    /// selection traces, and model checkpoints.
    Train {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the world seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip completed arms and continue interrupted ones from their
        /// latest checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Summarize and compare metric traces from two selection policies.
    Compare {
        /// Metric CSV paths (at least two, covering two policies).
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
}

fn load_config(
    path: &std::path::Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> fedsim::Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.world.seed = seed;
    }
    if let Some(out) = out {
        config.output_dir = out;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> fedsim::Result<()> {
    match cli.command {
        Command::Partition { config, seed, out } => {
            let config = load_config(&config, seed, out)?;
            let (partition, summary) = experiment::run_partition(&config)?;
            println!("wrote {}", partition.display());
            println!("wrote {}", summary.display());
            let text =
                std::fs::read_to_string(&summary).map_err(|e| fedsim::Error::io(summary, e))?;
            print!("{text}");
        }
        Command::Train { config, seed, out, resume } => {
            let config = load_config(&config, seed, out)?;
            let outputs = experiment::run_train(&config, resume)?;
            for arm in &outputs {
                println!("wrote {}", arm.metrics_csv.display());
            }
            println!("done: {} arms", outputs.len());
        }
        Command::Compare { traces } => {
            let summary = experiment::compare(&traces)?;
            print!("{summary}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
