//! Transfer protocol: learn masks on one task, fine-tune the masked network
//! on a few examples of another, compare against random masks and the dense
//! network.
//!
//! `cargo run --release --example transfer`

use archprune::baselines::random_prune;
use archprune::data::{balanced_subsample, class_subset, synthetic_blobs, train_test_split};
use archprune::optimizer::{run_ap, TwoTempConfig};
use archprune::transfer::{evaluate_mask, mean_std, transfer_experiment, MaskEntry, MaskSource, TransferConfig};
use archprune::{HardMask, MaskedMlp, Result};

fn main() -> Result<()> {
    let all = synthetic_blobs(10, 200, 32, 0.35, 0);
    let (train, test) = train_test_split(&all, 0.2, 0);
    let source = class_subset(&train, &[0, 1, 2, 3, 4])?;
    let pool = class_subset(&train, &[5, 6, 7, 8, 9])?;
    let held_out = class_subset(&test, &[5, 6, 7, 8, 9])?;

    let parent = MaskedMlp::mlp(&[32, 32, 5])?;
    let s = 0.9;
    let cfg = TwoTempConfig { gamma: 0.008, target_sparsity: s, iterations: 4000, c: 0.1, ..TwoTempConfig::default() };
    let ours = run_ap(&parent, &source, &cfg, 1.0)?;
    println!("AP mask frozen at {:?}, sparsity {:.3}", ours.state.frozen_at, ours.mask.sparsity());

    let masks = [
        MaskEntry { source: MaskSource::Ours, sparsity: s, mask: ours.mask },
        MaskEntry { source: MaskSource::Random, sparsity: s, mask: random_prune(parent.num_weights(), s, 0)? },
    ];
    let tc = TransferConfig { n_seeds: 5, ..TransferConfig::default() };
    let grid = transfer_experiment(&parent, &masks, &pool, &held_out, &[250, 50], &tc, 0, 1)?;
    for r in &grid.reports {
        println!("{:>5} size {:>3}: {:.4} ± {:.4}", r.source, r.new_size, r.mean, r.std);
    }
    let dense = HardMask::ones(parent.num_weights());
    let few = balanced_subsample(&pool, &[0, 1, 2, 3, 4], 50, 0)?;
    let (mean, std) = mean_std(&evaluate_mask(&parent, &dense, &few, &held_out, &tc)?);
    println!("dense size 250: {mean:.4} ± {std:.4}");
    Ok(())
}
