//! Learn a pruned architecture with the two-temperature optimizer, watch the
//! freeze, then harden and save the mask.
//!
//! `cargo run --example ap_train [target_sparsity]`

use archprune::baselines::{layerwise_density, write_mask_file};
use archprune::data::synthetic_blobs;
use archprune::optimizer::{write_history_csv, ApTrainer, TwoTempConfig};
use archprune::{MaskMode, MaskedMlp, Result, TempPair};

fn main() -> Result<()> {
    let target: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.8);
    let data = synthetic_blobs(5, 200, 20, 0.4, 0);
    let parent = MaskedMlp::mlp(&[20, 32, 5])?;
    let cfg = TwoTempConfig {
        temps: TempPair::new(100.0, 10.0)?,
        gamma: 0.008,
        target_sparsity: target,
        iterations: 3000,
        c: 0.1,
        ..TwoTempConfig::default()
    };

    let mut trainer = ApTrainer::new(&parent, &data, &cfg)?;
    for _ in 0..cfg.iterations {
        let row = trainer.step()?;
        if row.iter % 250 == 0 {
            println!(
                "iter {:>5}  loss {:.4}  sparsity {:.3}  frozen {}",
                row.iter, row.loss, row.sparsity, row.frozen
            );
        }
    }
    let state = trainer.into_state();
    let mask = state.hard_mask();
    println!(
        "frozen at {:?}, {} of {} connections kept, max|w| {:.2}",
        state.frozen_at,
        mask.popcount(),
        mask.len(),
        state.max_abs_w
    );
    println!("per-layer density {:?}", layerwise_density(&mask, &parent.partition())?);
    println!("train accuracy with hard mask {:.4}", state.model.accuracy(&data, MaskMode::Hard(&mask))?);

    let dir = std::env::temp_dir().join("archprune_ap_train");
    std::fs::create_dir_all(&dir).map_err(|e| archprune::Error::io(&dir, e))?;
    write_mask_file(&dir.join("mask.txt"), &mask)?;
    write_history_csv(&dir.join("history.csv"), &state.history)?;
    println!("wrote {}", dir.display());
    Ok(())
}
