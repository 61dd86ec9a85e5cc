use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use archprune::harness::{self, Command, ExperimentSpec};
use archprune::Error;

#[derive(Parser)]
#[command(name = "archprune", version, about = "Architecture pruning with two-temperature mask relaxation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// key=value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the `seed` key
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for grid cells and seeds
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Shrinks widths, iterations and dataset sizes (0 < F <= 1)
    #[arg(long, global = true, default_value_t = 1.0)]
    scale: f64,

    /// key=value override, repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Train one AP mask and write history, mask, checkpoint and bound constants
    ApTrain,
    /// Fine-tune ours/rnd/imp masks over sparsities and new-task sizes
    TransferGrid,
    /// Generate random and IMP masks
    Baseline,
    /// Compare t_s settings at fixed t_l on the binary MNIST task
    ConvergenceDemo,
    /// Fine-tune layer-wise reshuffled AP and IMP masks
    ReshuffleEval,
    /// Check the convergence bound on a convex fixed-weight instance
    BoundCheck,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::ApTrain => Command::ApTrain,
            Cmd::TransferGrid => Command::TransferGrid,
            Cmd::Baseline => Command::Baseline,
            Cmd::ConvergenceDemo => Command::ConvergenceDemo,
            Cmd::ReshuffleEval => Command::ReshuffleEval,
            Cmd::BoundCheck => Command::BoundCheck,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let spec = ExperimentSpec {
        command: cli.command.into(),
        config_path: cli.config,
        out_dir: cli.out,
        seed: cli.seed,
        jobs: cli.jobs,
        scale: cli.scale,
        overrides: cli.overrides,
    };
    match harness::run(&spec) {
        Ok(summary) => {
            for f in &summary.failed {
                eprintln!("incomplete: {f}");
            }
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e @ Error::MissingData { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
