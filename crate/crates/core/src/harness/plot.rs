//! gnuplot data blocks and scripts.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::transfer::TransferReport;

use super::ConvergenceRun;

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `convergence.dat` holds one block per `t_s` (`iter loss objective
/// surviving`); `convergence.gp` plots the objective of each block.
pub fn write_convergence_plot(dir: &Path, runs: &[ConvergenceRun]) -> Result<()> {
    let mut dat = String::new();
    let mut gp = String::from(
        "set xlabel \"iteration\"\nset ylabel \"objective\"\nset logscale y\nset key top right\nplot \\\n",
    );
    for (i, run) in runs.iter().enumerate() {
        if i > 0 {
            dat.push_str("\n\n");
        }
        let last = run.curve.last().map_or(0, |p| p.surviving);
        writeln!(dat, "# t_s={} |m|={last}", run.t_s).unwrap();
        writeln!(dat, "# iter loss objective surviving").unwrap();
        for p in &run.curve {
            writeln!(dat, "{} {} {} {}", p.iter, p.loss, p.objective, p.surviving).unwrap();
        }
        let sep = if i + 1 == runs.len() { "\n" } else { ", \\\n" };
        write!(
            gp,
            "  \"convergence.dat\" index {i} using 1:3 with lines title \"t_s={}, |m|={last}\"{sep}",
            run.t_s
        )
        .unwrap();
    }
    write(&dir.join("convergence.dat"), &dat)?;
    write(&dir.join("convergence.gp"), &gp)
}

/// One block per source (`sparsity mean std`) for a single new-task size,
/// plus a script plotting accuracy against sparsity with error bars.
pub fn write_transfer_plot(dir: &Path, size: usize, reports: &[&TransferReport]) -> Result<()> {
    let mut sources: Vec<_> = Vec::new();
    for r in reports {
        if !sources.contains(&r.source) {
            sources.push(r.source);
        }
    }
    let dat_name = format!("transfer_size{size}.dat");
    let mut dat = String::new();
    let mut gp = format!(
        "set title \"new-task size {size}\"\nset xlabel \"sparsity\"\nset ylabel \"test accuracy\"\nset key bottom left\nplot \\\n"
    );
    for (i, src) in sources.iter().enumerate() {
        if i > 0 {
            dat.push_str("\n\n");
        }
        writeln!(dat, "# source={src}\n# sparsity mean std").unwrap();
        for r in reports.iter().filter(|r| r.source == *src) {
            writeln!(dat, "{} {} {}", r.sparsity, r.mean, r.std).unwrap();
        }
        let sep = if i + 1 == sources.len() { "\n" } else { ", \\\n" };
        write!(gp, "  \"{dat_name}\" index {i} using 1:2:3 with yerrorlines title \"{src}\"{sep}").unwrap();
    }
    write(&dir.join(&dat_name), &dat)?;
    write(&dir.join(format!("transfer_size{size}.gp")), &gp)
}
