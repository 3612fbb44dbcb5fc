//! `cardiff` command line: data generation, training, refinement, attacks,
//! the landscape demo and timing runs.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cardiff", version, about = "Constraint-aware refinement with guided DDIM trajectories")]
pub struct Cli {
    /// Worker threads for per-sample parallel work; 0 uses every core.
    /// Results do not depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,

    /// Overrides the top-level seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Prints the effective configuration as TOML and exits.
    #[arg(long, global = true)]
    pub print_config: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generates a dataset.
    GenData {
        #[command(subcommand)]
        what: GenData,
    },
    /// Trains one network on a dataset directory.
    Train {
        kind: TrainKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model file to write.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refines base predictions on the test split and scores them.
    Refine {
        /// Base estimator.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Noise model.
        #[arg(long)]
        eps: Option<PathBuf>,
        /// Optional physics-penalized estimator, scored alongside.
        #[arg(long)]
        pinn: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Newton-Raphson power-flow solve from the flat start.
    SolvePf {
        /// `ieee14`, `ieee30` or a case file.
        #[arg(long, default_value = "ieee14")]
        case: String,
        /// CSV with `p_<id>`/`q_<id>` columns; nominal injections if absent.
        #[arg(long)]
        injections: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attacks the tabular classifier.
    Attack {
        #[arg(long, value_enum, default_value_t = AttackArg::All)]
        kind: AttackArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Tabular dataset; generated from the config if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Trained classifier; trained from the config if absent.
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Noise model; trained from the config if absent.
        #[arg(long)]
        eps: Option<PathBuf>,
    },
    /// Optimizer comparison on the two-dimensional landscape.
    Toy {
        /// Start file (`figure1`/`figure2` lists); the shipped starts if absent.
        #[arg(long)]
        starts: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Noise model; trained from the config if absent.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Per-instance timing table.
    Bench {
        #[arg(long, value_enum)]
        track: TrackArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
pub enum GenData {
    /// Power-flow samples solved by Newton-Raphson.
    Pf {
        /// `ieee14`, `ieee30` or a case file; overrides the config.
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic tabular records satisfying a constraint schema.
    Tabular {
        /// Constraint schema (TOML); the built-in credit schema if absent.
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainKind {
    Base,
    Pinn,
    Eps,
    Classifier,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackArg {
    Pgd,
    Penalty,
    Cardiff,
    All,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackArg {
    Pf,
    Attack,
    Toy,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global() {
        eprintln!("error[config]: cannot start worker pool: {e}");
        return ExitCode::from(2);
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            eprintln!("error[{}]: {e}", class.name());
            ExitCode::from(class.exit_code() as u8)
        }
    }
}
