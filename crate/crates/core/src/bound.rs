//! Numerical check of the convergence bound on convex fixed-`θ` instances.
//!
//! With `θ` held fixed, the logistic loss is convex in the relaxed mask `v`.
//! Runs of the two-temperature mask update (batch size one, no penalty) are
//! compared against a long exact-gradient reference run, and the seed-averaged
//! optimality gap is tested against [`convergence_bound`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::model::{Batch, MaskMode, MaskedMlp};
use crate::optimizer::lr_schedule;
use crate::relaxation::{bound_constant_c, convergence_bound, two_temp_grad, MaskLogits, TempPair};

/// A logistic model with fixed weights whose only free parameters are the
/// mask logits.
#[derive(Debug, Clone)]
pub struct ConvexInstance {
    model: MaskedMlp,
    data: Dataset,
}

impl ConvexInstance {
    pub fn new(theta: Vec<f64>, data: Dataset) -> Result<Self> {
        let mut model = MaskedMlp::logistic(theta.len(), false)?;
        Error::check_len(theta.len(), data.n_features())?;
        if data.is_empty() || data.class_count() > 2 {
            return Err(Error::InvalidInput("need a nonempty binary dataset".into()));
        }
        model.theta_mut().copy_from_slice(&theta);
        Ok(Self { model, data })
    }

    /// `n` Gaussian inputs labelled by a logistic teacher with effective
    /// weights `θ ∘ v_true`, `v_true ∈ [0.25, 0.75]`, so the optimum is interior.
    pub fn logistic(dim: usize, n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let theta: Vec<f64> = (0..dim)
            .map(|_| {
                let t = 1.0 + rng.random::<f64>();
                if rng.random::<bool>() { t } else { -t }
            })
            .collect();
        let v_true: Vec<f64> = (0..dim).map(|_| 0.25 + 0.5 * rng.random::<f64>()).collect();
        let mut x = Vec::with_capacity(n * dim);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..dim).map(|_| normal.sample(&mut rng)).collect();
            let z: f64 = row.iter().zip(&theta).zip(&v_true).map(|((x, t), v)| x * t * v).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            y.push(usize::from(rng.random::<f64>() < p));
            x.extend(row);
        }
        Self::new(theta, Dataset::new(x, y, dim, 2, Provenance::Synthetic)?)
    }

    /// `θ = 0`: the loss is `ln 2` everywhere and every gradient vanishes.
    pub fn constant(dim: usize) -> Result<Self> {
        let x = vec![1.0; 2 * dim];
        Self::new(vec![0.0; dim], Dataset::new(x, vec![0, 1], dim, 2, Provenance::Synthetic)?)
    }

    pub fn dim(&self) -> usize {
        self.model.num_weights()
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn theta(&self) -> &[f64] {
        self.model.theta()
    }

    /// Full-data relaxed loss `L_{t_l}(w)`.
    pub fn loss(&self, w: &[f64], t_l: f64) -> Result<f64> {
        let mut m = self.model.clone();
        m.set_logits(MaskLogits::new(w.to_vec())?)?;
        m.dataset_loss(&self.data, MaskMode::Relaxed { t_l }, 0.0)
    }

    /// `∇_v` of the loss at a single example for a given relaxed mask `v`.
    pub fn example_grad_v(&self, v: &[f64], i: usize) -> Vec<f64> {
        let x = self.data.row(i);
        let y = self.data.label(i) as f64;
        let theta = self.model.theta();
        let z: f64 = (0..v.len()).map(|j| v[j] * theta[j] * x[j]).sum();
        let f = 1.0 / (1.0 + (-z).exp());
        (0..v.len()).map(|j| (f - y) * theta[j] * x[j]).collect()
    }

    fn mask_grad(&self, model: &mut MaskedMlp, batch: &Batch, temps: TempPair) -> Result<Vec<f64>> {
        let g = model.loss_and_grads(batch, MaskMode::Relaxed { t_l: temps.low() }, 0.0)?;
        two_temp_grad(&g.grad_v, model.logits(), temps.high())
    }
}

/// `G`: the largest `‖∇_v ℓ(v; z)‖` over `samples` uniformly random
/// `v ∈ [0,1]^D` and training examples `z`, times `inflation`.
pub fn estimate_grad_bound(instance: &ConvexInstance, samples: usize, inflation: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = instance.dim();
    let mut best = 0.0_f64;
    for _ in 0..samples {
        let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let i = rng.random_range(0..instance.data.len());
        let g = instance.example_grad_v(&v, i);
        best = best.max(g.iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    best * inflation
}

/// Minimum loss seen along `steps` of full-batch gradient descent on `w`
/// with the exact gradient, starting from `w = 0`.
pub fn reference_loss(instance: &ConvexInstance, t_l: f64, steps: usize, lr: f64) -> Result<f64> {
    let temps = TempPair::new(t_l, t_l)?;
    let all: Vec<usize> = (0..instance.data.len()).collect();
    let batch = Batch::from_dataset(&instance.data, &all)?;
    let mut model = instance.model.clone();
    model.set_logits(MaskLogits::zeros(instance.dim()))?;
    let mut best = f64::INFINITY;
    for it in 0..steps {
        let g = model.loss_and_grads(&batch, MaskMode::Relaxed { t_l }, 0.0)?;
        best = best.min(g.loss);
        let grad = two_temp_grad(&g.grad_v, model.logits(), temps.high())?;
        let w = model.logits_mut().as_mut_slice();
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= lr * gi;
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { iteration: it + 1, what: "reference run".into() });
        }
    }
    Ok(best.min(model.dataset_loss(&instance.data, MaskMode::Relaxed { t_l }, 0.0)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckConfig {
    pub temps: TempPair,
    pub c: f64,
    pub iterations: usize,
    pub eps_w: f64,
    pub seed: u64,
    pub reference_steps: usize,
    pub reference_lr: f64,
    pub grad_samples: usize,
    pub grad_inflation: f64,
}

impl Default for BoundCheckConfig {
    fn default() -> Self {
        Self {
            temps: TempPair::new(4.0, 2.0).expect("valid temperatures"),
            c: 1.0,
            iterations: 1000,
            eps_w: 0.1,
            seed: 0,
            reference_steps: 100_000,
            reference_lr: 0.5,
            grad_samples: 10_000,
            grad_inflation: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub iterations: usize,
    pub n_seeds: usize,
    /// Per-seed `L(w_T) − L*`.
    pub gaps: Vec<f64>,
    pub mean_gap: f64,
    pub reference_loss: f64,
    pub grad_bound: f64,
    /// `M` over all seeds.
    pub max_abs_w: f64,
    pub error_constant: f64,
    pub bound: f64,
    pub satisfied: bool,
}

/// One SGD trajectory of the mask logits; returns `(L(w_T), max |w_i|)`.
pub fn mask_trajectory(instance: &ConvexInstance, config: &BoundCheckConfig, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, config.eps_w)
        .map_err(|e| Error::Config(format!("eps_w: {e}")))?;
    let w0: Vec<f64> = (0..instance.dim()).map(|_| normal.sample(&mut rng).abs()).collect();
    let mut model = instance.model.clone();
    model.set_logits(MaskLogits::new(w0)?)?;
    let mut max_abs = model.logits().max_abs();
    for it in 1..=config.iterations {
        let i = rng.random_range(0..instance.data.len());
        let batch = Batch::from_dataset(&instance.data, &[i])?;
        let grad = instance.mask_grad(&mut model, &batch, config.temps)?;
        let alpha = lr_schedule(it, config.c)?;
        let w = model.logits_mut().as_mut_slice();
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= alpha * gi;
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { iteration: it, what: "mask logits".into() });
        }
        max_abs = max_abs.max(model.logits().max_abs());
    }
    let loss = model.dataset_loss(&instance.data, MaskMode::Relaxed { t_l: config.temps.low() }, 0.0)?;
    Ok((loss, max_abs))
}

/// Runs `n_seeds` trajectories and compares the averaged gap with the bound.
pub fn empirical_bound_check(
    instance: &ConvexInstance,
    config: &BoundCheckConfig,
    n_seeds: usize,
) -> Result<BoundReport> {
    if n_seeds == 0 || config.iterations == 0 {
        return Err(Error::InvalidInput("need at least one seed and one iteration".into()));
    }
    let grad_bound = estimate_grad_bound(instance, config.grad_samples, config.grad_inflation, config.seed);
    let reference = reference_loss(instance, config.temps.low(), config.reference_steps, config.reference_lr)?;
    empirical_bound_check_with(instance, config, n_seeds, reference, grad_bound)
}

/// [`empirical_bound_check`] with a precomputed reference loss and `G`, so
/// several horizons can share one reference run.
pub fn empirical_bound_check_with(
    instance: &ConvexInstance,
    config: &BoundCheckConfig,
    n_seeds: usize,
    reference: f64,
    grad_bound: f64,
) -> Result<BoundReport> {
    if n_seeds == 0 || config.iterations == 0 {
        return Err(Error::InvalidInput("need at least one seed and one iteration".into()));
    }
    let runs = (0..n_seeds as u64)
        .map(|s| mask_trajectory(instance, config, config.seed.wrapping_add(s)))
        .collect::<Result<Vec<_>>>()?;
    let best_seen = runs.iter().map(|r| r.0).fold(f64::INFINITY, f64::min);
    let l_star = reference.min(best_seen);
    let gaps: Vec<f64> = runs.iter().map(|r| r.0 - l_star).collect();
    let mean_gap = gaps.iter().sum::<f64>() / n_seeds as f64;
    let max_abs_w = runs.iter().map(|r| r.1).fold(0.0, f64::max);
    let error_constant = bound_constant_c(config.temps.low(), config.temps.high(), max_abs_w);
    let bound = convergence_bound(config.iterations, config.c, grad_bound, error_constant);
    Ok(BoundReport {
        iterations: config.iterations,
        n_seeds,
        gaps,
        mean_gap,
        reference_loss: l_star,
        grad_bound,
        max_abs_w,
        error_constant,
        bound,
        satisfied: mean_gap <= bound,
    })
}
