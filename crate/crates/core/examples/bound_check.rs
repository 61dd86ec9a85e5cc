//! Empirical check of the convergence bound on a convex instance where the
//! weights are fixed and only the mask logits train.
//!
//! `cargo run --release --example bound_check`

use archprune::bound::{empirical_bound_check, BoundCheckConfig, ConvexInstance};
use archprune::{Result, TempPair};

fn main() -> Result<()> {
    let instance = ConvexInstance::logistic(5, 500, 0)?;
    for iterations in [100, 1000] {
        let cfg = BoundCheckConfig {
            temps: TempPair::new(4.0, 2.0)?,
            c: 1.0,
            iterations,
            reference_steps: 20_000,
            ..BoundCheckConfig::default()
        };
        let r = empirical_bound_check(&instance, &cfg, 10)?;
        println!(
            "T = {:>5}: mean gap {:.5} (L* {:.5}), G {:.3}, M {:.3}, C {:.4}, bound {:.4}, holds {}",
            r.iterations, r.mean_gap, r.reference_loss, r.grad_bound, r.max_abs_w, r.error_constant, r.bound, r.satisfied
        );
    }
    Ok(())
}
