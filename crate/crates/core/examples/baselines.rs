//! Random pruning, iterative magnitude pruning and layer-wise reshuffling.
//!
//! `cargo run --release --example baselines`

use archprune::baselines::{
    imp_prune, imp_schedule, layerwise_density, layerwise_reshuffle, random_prune, ImpConfig,
};
use archprune::data::synthetic_blobs;
use archprune::{MaskedMlp, Result};

fn main() -> Result<()> {
    let data = synthetic_blobs(4, 150, 16, 0.4, 1);
    let parent = MaskedMlp::mlp(&[16, 24, 4])?;
    let part = parent.partition();
    let s = 0.9;

    let rnd = random_prune(parent.num_weights(), s, 0)?;
    println!("rnd: {} kept, layer density {:?}", rnd.popcount(), layerwise_density(&rnd, &part)?);

    println!("imp surviving-fraction schedule {:?}", imp_schedule(s, 4));
    let imp = imp_prune(&parent, &data, s, &ImpConfig { rounds: 4, total_iters: 2000, ..ImpConfig::default() })?;
    for (k, m) in imp.round_masks.iter().enumerate() {
        println!("imp round {}: {} kept", k + 1, m.popcount());
    }
    let dens = layerwise_density(&imp.mask, &part)?;
    println!("imp layer density {dens:?}");

    let shuffled = layerwise_reshuffle(&imp.mask, &part, 7)?;
    println!(
        "reshuffled imp: layer density {:?}, overlap with original {}",
        layerwise_density(&shuffled, &part)?,
        (0..shuffled.len()).filter(|&i| shuffled.get(i) && imp.mask.get(i)).count()
    );
    Ok(())
}
