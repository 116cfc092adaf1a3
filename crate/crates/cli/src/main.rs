use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ticketlab::corpus::TaskKind;
use ticketlab_cli::{CliError, Experiment, ExperimentConfig, PruneMethod, Result};

#[derive(Parser)]
#[command(
    name = "ticketlab",
    version,
    about = "Sparse sub-network experiments on synthetic multilingual data"
)]
struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the global base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory, overriding `output_dir` from the config.
    #[arg(long, global = true, env = "TICKETLAB_OUTPUT")]
    output: Option<PathBuf>,
    /// Re-run stages whose inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved config.
    Config,
    /// Write the grammar, languages and every task dataset.
    Generate,
    /// Joint multilingual masked-LM pretraining of θ₀.
    Pretrain,
    /// Discover masks for every language of a task.
    Prune {
        #[arg(value_enum)]
        method: PruneMethod,
        #[arg(long)]
        task: Option<TaskKind>,
    },
    /// Baselines, cross-language transfer matrices and ticket verdicts.
    Transfer {
        #[arg(long)]
        task: Option<TaskKind>,
    },
    /// Retrain alternative pruners' masks and compare them with IMP.
    Compare {
        #[arg(long)]
        task: Option<TaskKind>,
    },
    /// Pairwise mask overlap, globally and per layer.
    Overlap {
        #[arg(long)]
        task: Option<TaskKind>,
    },
    /// Layerwise SVCCA / PWCCA profiles of θ₀ on parallel sentences.
    Similarity,
    /// Margin-based parallel sentence retrieval.
    Retrieve,
    /// Consolidated report and long tables.
    Report,
    /// Every stage in order.
    Run,
}

fn tasks(exp: &Experiment, task: Option<TaskKind>) -> Vec<TaskKind> {
    task.map_or_else(|| exp.tasks(), |t| vec![t])
}

fn execute(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.resolve()?;
    if let Command::Config = cli.command {
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::config(format!("--jobs: {e}")))?;
    }
    let root = cli.output.clone().unwrap_or_else(|| config.output_dir.clone());
    let mut exp = Experiment::open(config, &root)?;
    exp.force = cli.force;
    exp.verbose = !cli.quiet;
    match cli.command {
        Command::Config => {}
        Command::Generate => {
            exp.generate()?;
        }
        Command::Pretrain => {
            exp.pretrain()?;
        }
        Command::Prune { method, task } => {
            for t in tasks(&exp, task) {
                exp.prune(method, t)?;
            }
        }
        Command::Transfer { task } => {
            for t in tasks(&exp, task) {
                exp.transfer(t)?;
            }
        }
        Command::Compare { task } => {
            for t in tasks(&exp, task) {
                exp.compare(t)?;
            }
        }
        Command::Overlap { task } => {
            for t in tasks(&exp, task) {
                exp.overlap(t)?;
            }
        }
        Command::Similarity => {
            exp.similarity()?;
        }
        Command::Retrieve => {
            exp.retrieve()?;
        }
        Command::Report => {
            exp.report()?;
        }
        Command::Run => exp.run_all()?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
