//! Fixed `t_l`, three choices of `t_s` on MNIST 0-vs-1 (synthetic two-class
//! blobs when MNIST is not fetched). Prints the penalised objective and the
//! final mask size of each run.
//!
//! `cargo run --release --example convergence_demo`

use archprune::data::synthetic_blobs;
use archprune::harness::{self, convergence_runs, Command, ExperimentConfig};
use archprune::{Error, MaskedMlp, Result};

fn main() -> Result<()> {
    let cfg = ExperimentConfig::for_command(Command::ConvergenceDemo);
    let data = match harness::binary_train_set(&cfg, 1.0) {
        Ok(d) => d,
        Err(e @ Error::MissingData { .. }) => {
            eprintln!("{e}\nfalling back to synthetic data");
            synthetic_blobs(2, 500, 64, 0.5, 0)
        }
        Err(e) => return Err(e),
    };
    let parent = MaskedMlp::logistic(data.n_features(), false)?;
    let runs = convergence_runs(&parent, &data, &cfg.ap, &cfg.ts_grid, cfg.eval_every, 1)?;
    println!("t_l = {}, gamma = {}, T = {}", cfg.ap.temps.low(), cfg.ap.gamma, cfg.ap.iterations);
    for run in runs {
        let run = run?;
        let p = run.final_point();
        println!(
            "t_s = {:>6}: loss {:.4}  objective {:.4}  |m| {}",
            run.t_s, p.loss, p.objective, p.surviving
        );
    }
    Ok(())
}
