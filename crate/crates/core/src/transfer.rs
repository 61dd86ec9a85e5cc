//! Transferability protocol: re-initialise a fixed sub-architecture, fine-tune
//! only its surviving weights on a small new-task set and report test
//! accuracy over several seeds.

use std::fmt;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{balanced_subsample, Dataset};
use crate::error::{Error, Result};
use crate::model::{Batch, MaskMode, MaskedMlp};
use crate::optimizer::sample_batch;
use crate::relaxation::HardMask;

/// Plain minibatch SGD settings for weight training under a fixed mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdSettings {
    /// Constant step `β`.
    pub beta: f64,
    pub batch_size: usize,
    /// `γ` in the `γ‖θ‖²` penalty.
    pub gamma: f64,
}

impl Default for SgdSettings {
    fn default() -> Self {
        Self {
            beta: 0.05,
            batch_size: 32,
            gamma: 0.0,
        }
    }
}

/// SGD on the weights of `model` with `θ̃ = m ∘ θ`. Only coordinates with
/// `m_i = 1` are written; biases are always trained.
pub fn masked_sgd<R: Rng + ?Sized>(
    model: &mut MaskedMlp,
    mask: &HardMask,
    data: &Dataset,
    iters: usize,
    sgd: &SgdSettings,
    rng: &mut R,
) -> Result<()> {
    masked_sgd_observed(model, mask, data, iters, sgd, rng, |_, _| {})
}

pub fn masked_sgd_observed<R, F>(
    model: &mut MaskedMlp,
    mask: &HardMask,
    data: &Dataset,
    iters: usize,
    sgd: &SgdSettings,
    rng: &mut R,
    mut observe: F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &MaskedMlp),
{
    Error::check_len(model.num_weights(), mask.len())?;
    if iters > 0 && data.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if sgd.batch_size == 0 {
        return Err(Error::InvalidInput("batch_size must be positive".into()));
    }
    for it in 1..=iters {
        let idx = sample_batch(rng, data.len(), sgd.batch_size);
        let batch = Batch::from_dataset(data, &idx)?;
        let g = model.loss_and_grads(&batch, MaskMode::Hard(mask), sgd.gamma)?;
        if !g.loss.is_finite() || g.grad_theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                what: format!("fine-tuning loss {}", g.loss),
            });
        }
        for ((t, &gt), &m) in model.theta_mut().iter_mut().zip(&g.grad_theta).zip(mask.bits()) {
            if m {
                *t -= sgd.beta * gt;
            }
        }
        if let Some(b) = model.bias_mut() {
            for (bi, gb) in b.iter_mut().zip(&g.grad_bias) {
                *bi -= sgd.beta * gb;
            }
        }
        observe(it, model);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    pub retrain_iters: usize,
    pub sgd: SgdSettings,
    pub eps_theta: f64,
    pub n_seeds: usize,
    /// First seed; run `k` uses `base_seed + k`.
    pub base_seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            retrain_iters: 500,
            sgd: SgdSettings::default(),
            eps_theta: 0.1,
            n_seeds: 5,
            base_seed: 0,
        }
    }
}

/// Fresh `θ_0 ~ N(0, ε_θ²)` on the parent architecture, then masked SGD on
/// `retrain`. Returns the fine-tuned model; its logits are left untouched.
pub fn fine_tune(
    parent: &MaskedMlp,
    mask: &HardMask,
    retrain: &Dataset,
    config: &TransferConfig,
    seed: u64,
) -> Result<MaskedMlp> {
    fine_tune_observed(parent, mask, retrain, config, seed, |_, _| {})
}

/// [`fine_tune`] with a callback after every update; iteration 0 is the
/// freshly initialised model.
pub fn fine_tune_observed<F>(
    parent: &MaskedMlp,
    mask: &HardMask,
    retrain: &Dataset,
    config: &TransferConfig,
    seed: u64,
    mut observe: F,
) -> Result<MaskedMlp>
where
    F: FnMut(usize, &MaskedMlp),
{
    Error::check_len(parent.num_weights(), mask.len())?;
    Error::check_len(parent.n_inputs(), retrain.n_features())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = parent.clone();
    model.init_theta(&mut rng, config.eps_theta);
    observe(0, &model);
    masked_sgd_observed(
        &mut model,
        mask,
        retrain,
        config.retrain_iters,
        &config.sgd,
        &mut rng,
        &mut observe,
    )?;
    Ok(model)
}

/// Accuracy of `θ̃* = m ∘ θ*` on `test`.
pub fn evaluate_accuracy(model: &MaskedMlp, mask: &HardMask, test: &Dataset) -> Result<f64> {
    model.accuracy(test, MaskMode::Hard(mask))
}

/// Where a mask came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MaskSource {
    Ours,
    Random,
    Imp,
    ReshuffledOurs,
    ReshuffledImp,
}

impl MaskSource {
    pub fn tag(self) -> &'static str {
        match self {
            MaskSource::Ours => "ours",
            MaskSource::Random => "rnd",
            MaskSource::Imp => "imp",
            MaskSource::ReshuffledOurs => "reshuffle_ours",
            MaskSource::ReshuffledImp => "reshuffle_imp",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        [
            MaskSource::Ours,
            MaskSource::Random,
            MaskSource::Imp,
            MaskSource::ReshuffledOurs,
            MaskSource::ReshuffledImp,
        ]
        .into_iter()
        .find(|s| s.tag() == tag)
    }
}

impl fmt::Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A mask entered into a transfer grid.
#[derive(Debug, Clone)]
pub struct MaskEntry {
    pub source: MaskSource,
    /// Nominal sparsity of the grid cell.
    pub sparsity: f64,
    pub mask: HardMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub source: MaskSource,
    pub sparsity: f64,
    pub new_size: usize,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl TransferReport {
    pub fn new(source: MaskSource, sparsity: f64, new_size: usize, accuracies: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&accuracies);
        Self {
            source,
            sparsity,
            new_size,
            accuracies,
            mean,
            std,
        }
    }
}

/// Fine-tunes `mask` from `n_seeds` fresh initialisations and returns the
/// per-seed test accuracies.
pub fn evaluate_mask(
    parent: &MaskedMlp,
    mask: &HardMask,
    retrain: &Dataset,
    test: &Dataset,
    config: &TransferConfig,
) -> Result<Vec<f64>> {
    (0..config.n_seeds)
        .map(|k| {
            let model = fine_tune(parent, mask, retrain, config, config.base_seed + k as u64)?;
            evaluate_accuracy(&model, mask, test)
        })
        .collect()
}

/// Outcome of a transfer grid: finished cells plus the ones that were skipped.
#[derive(Debug, Clone, Default)]
pub struct TransferGrid {
    pub reports: Vec<TransferReport>,
    pub skipped: Vec<String>,
}

/// Runs every `(mask, new-task size, seed)` cell. Each size draws one
/// balanced subsample of `pool` (seeded by `subsample_seed`) that all masks
/// and seeds share. Cells run on a pool of `jobs` threads; results come back
/// ordered by input position.
#[allow(clippy::too_many_arguments)]
pub fn transfer_experiment(
    parent: &MaskedMlp,
    masks: &[MaskEntry],
    pool: &Dataset,
    test: &Dataset,
    sizes: &[usize],
    config: &TransferConfig,
    subsample_seed: u64,
    jobs: usize,
) -> Result<TransferGrid> {
    let classes: Vec<usize> = (0..pool.class_count()).collect();
    let mut skipped = Vec::new();
    let mut subsets = Vec::new();
    for &size in sizes {
        let per_class = size / classes.len().max(1);
        match balanced_subsample(pool, &classes, per_class, subsample_seed) {
            Ok(ds) if !ds.is_empty() => subsets.push((size, ds)),
            Ok(_) => {
                warn!("new-task size {size} gives no examples per class, skipping");
                skipped.push(format!("size={size}: empty subsample"));
            }
            Err(e) => {
                warn!("skipping new-task size {size}: {e}");
                skipped.push(format!("size={size}: {e}"));
            }
        }
    }

    let cells: Vec<(usize, usize, usize)> = (0..masks.len())
        .flat_map(|m| (0..subsets.len()).flat_map(move |s| (0..config.n_seeds).map(move |k| (m, s, k))))
        .collect();
    let pool_threads = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let results: Vec<Result<f64>> = pool_threads.install(|| {
        cells
            .par_iter()
            .map(|&(m, s, k)| {
                let entry = &masks[m];
                let model = fine_tune(
                    parent,
                    &entry.mask,
                    &subsets[s].1,
                    config,
                    config.base_seed + k as u64,
                )?;
                evaluate_accuracy(&model, &entry.mask, test)
            })
            .collect()
    });

    let mut reports = Vec::new();
    let mut it = cells.iter().zip(results);
    for entry in masks {
        for (size, _) in &subsets {
            let mut accs = Vec::with_capacity(config.n_seeds);
            let mut failed = None;
            for _ in 0..config.n_seeds {
                let (_, r) = it.next().expect("one result per cell");
                match r {
                    Ok(a) => accs.push(a),
                    Err(e) => failed = Some(e),
                }
            }
            match failed {
                None => reports.push(TransferReport::new(entry.source, entry.sparsity, *size, accs)),
                Some(e) => {
                    warn!("cell {} sparsity={} size={size} failed: {e}", entry.source, entry.sparsity);
                    skipped.push(format!(
                        "{} sparsity={} size={size}: {e}",
                        entry.source, entry.sparsity
                    ));
                }
            }
        }
    }
    Ok(TransferGrid { reports, skipped })
}

/// `source,sparsity,new_size,seed,accuracy`, one row per seed.
pub fn write_results_csv(path: &Path, reports: &[TransferReport], base_seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["source", "sparsity", "new_size", "seed", "accuracy"])?;
    for r in reports {
        for (k, a) in r.accuracies.iter().enumerate() {
            w.write_record([
                r.source.tag().to_string(),
                r.sparsity.to_string(),
                r.new_size.to_string(),
                (base_seed + k as u64).to_string(),
                a.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `source,sparsity,new_size,mean,std,n_seeds`.
pub fn write_summary_csv(path: &Path, reports: &[TransferReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["source", "sparsity", "new_size", "mean", "std", "n_seeds"])?;
    for r in reports {
        w.write_record([
            r.source.tag().to_string(),
            r.sparsity.to_string(),
            r.new_size.to_string(),
            r.mean.to_string(),
            r.std.to_string(),
            r.accuracies.len().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_blobs, Provenance};
    use crate::baselines::random_prune;

    fn config(iters: usize) -> TransferConfig {
        TransferConfig {
            retrain_iters: iters,
            n_seeds: 3,
            ..TransferConfig::default()
        }
    }

    #[test]
    fn pruned_weights_stay_at_init() {
        let data = synthetic_blobs(3, 30, 8, 0.1, 1);
        let parent = MaskedMlp::mlp(&[8, 6, 3]).unwrap();
        let mask = random_prune(parent.num_weights(), 0.6, 3).unwrap();
        let mut init: Option<Vec<f64>> = None;
        let mut steps = 0;
        fine_tune_observed(&parent, &mask, &data, &config(200), 7, |it, m| {
            if it == 0 {
                init = Some(m.theta().to_vec());
            }
            let t0 = init.as_ref().unwrap();
            for (i, (now, init)) in m.theta().iter().zip(t0).enumerate() {
                if !mask.get(i) {
                    assert_eq!(now.to_bits(), init.to_bits());
                }
            }
            steps += 1;
        })
        .unwrap();
        assert_eq!(steps, 201);
    }

    #[test]
    fn dense_mask_learns_blobs() {
        let data = synthetic_blobs(3, 40, 8, 0.05, 2);
        let parent = MaskedMlp::mlp(&[8, 6, 3]).unwrap();
        let ones = HardMask::ones(parent.num_weights());
        let model = fine_tune(&parent, &ones, &data, &config(600), 1).unwrap();
        assert!(evaluate_accuracy(&model, &ones, &data).unwrap() > 0.9);
    }

    #[test]
    fn zero_mask_predicts_a_constant() {
        // balanced 4-class set; with no connections every input gets the
        // same scores (the biases), so accuracy is exactly 1/4
        let data = synthetic_blobs(4, 25, 5, 0.1, 4);
        let parent = MaskedMlp::mlp(&[5, 3, 4]).unwrap();
        let zero = HardMask::zeros(parent.num_weights());
        let model = fine_tune(&parent, &zero, &data, &config(100), 2).unwrap();
        let preds = model.predict(data.features(), MaskMode::Hard(&zero)).unwrap();
        assert!(preds.iter().all(|&p| p == preds[0]));
        assert_eq!(evaluate_accuracy(&model, &zero, &data).unwrap(), 0.25);
    }

    #[test]
    fn single_weight_finds_the_right_sign() {
        // 1-d separable data: y = 1 iff x > 0.5; features shifted so that the
        // informative direction is +x against a learned bias
        let xs: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let ys: Vec<usize> = xs.iter().map(|&x| usize::from(x > 0.5)).collect();
        let data = Dataset::new(xs, ys, 1, 2, Provenance::Synthetic).unwrap();
        let parent = MaskedMlp::logistic(1, true).unwrap();
        let one = HardMask::ones(1);
        let cfg = TransferConfig {
            retrain_iters: 3000,
            sgd: SgdSettings { beta: 0.5, batch_size: 8, gamma: 0.0 },
            ..config(0)
        };
        let model = fine_tune(&parent, &one, &data, &cfg, 9).unwrap();
        assert!(model.theta()[0] > 0.0);
        assert!(evaluate_accuracy(&model, &one, &data).unwrap() >= 0.9);
    }

    #[test]
    fn same_seed_same_accuracy() {
        let data = synthetic_blobs(3, 20, 6, 0.2, 5);
        let parent = MaskedMlp::mlp(&[6, 5, 3]).unwrap();
        let mask = random_prune(parent.num_weights(), 0.5, 1).unwrap();
        let a = evaluate_mask(&parent, &mask, &data, &data, &config(100)).unwrap();
        let b = evaluate_mask(&parent, &mask, &data, &data, &config(100)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn grid_skips_oversized_cells_and_is_ordered() {
        let data = synthetic_blobs(2, 30, 4, 0.1, 6);
        let parent = MaskedMlp::mlp(&[4, 3, 2]).unwrap();
        let d = parent.num_weights();
        let masks = vec![
            MaskEntry { source: MaskSource::Random, sparsity: 0.5, mask: random_prune(d, 0.5, 1).unwrap() },
            MaskEntry { source: MaskSource::Ours, sparsity: 0.5, mask: HardMask::ones(d) },
        ];
        let grid = transfer_experiment(&parent, &masks, &data, &data, &[20, 1000, 10], &config(50), 3, 4).unwrap();
        assert_eq!(grid.skipped.len(), 1);
        let keys: Vec<_> = grid.reports.iter().map(|r| (r.source, r.new_size)).collect();
        assert_eq!(
            keys,
            vec![
                (MaskSource::Random, 20),
                (MaskSource::Random, 10),
                (MaskSource::Ours, 20),
                (MaskSource::Ours, 10)
            ]
        );
        let again = transfer_experiment(&parent, &masks, &data, &data, &[20, 1000, 10], &config(50), 3, 1).unwrap();
        assert_eq!(grid.reports, again.reports);
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[0.1, 0.1, 0.1]);
        assert!((m - 0.1).abs() < 1e-15 && s.abs() < 1e-15);
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
