//! Relaxed and hard masks, and the two-temperature surrogate gradient.
//!
//! `cargo run --example relaxation`

use archprune::relaxation::{bound_constant_c, g_max, harden_mask, relax_mask, two_temp_grad};
use archprune::{MaskLogits, Result};

fn main() -> Result<()> {
    let w = MaskLogits::new(vec![-0.4, -0.02, 0.0, 0.01, 0.3])?;
    let hard = harden_mask(&w);
    println!("w        {:?}", w.as_slice());
    println!("hard m   {:?}", hard.bits());
    for t in [1.0, 10.0, 100.0, 1000.0] {
        let v = relax_mask(&w, t)?;
        let shown: Vec<String> = v.values().iter().map(|x| format!("{x:.3}")).collect();
        println!("v(t={t:>6}) [{}]", shown.join(", "));
    }

    // The same upstream gradient through a sharp and a soft sigmoid.
    let grad_v = vec![1.0; w.len()];
    for t_s in [1000.0, 10.0, 1.0] {
        let g = two_temp_grad(&grad_v, &w, t_s)?;
        let shown: Vec<String> = g.iter().map(|x| format!("{x:.3e}")).collect();
        println!("grad_w(t_s={t_s:>6}) [{}]", shown.join(", "));
    }

    let m = 2.0;
    println!(
        "g_max(100, M={m}) = {:.3e}, g_max(10, M={m}) = {:.3e}, C = {:.4}",
        g_max(100.0, m),
        g_max(10.0, m),
        bound_constant_c(100.0, 10.0, m)
    );
    Ok(())
}
