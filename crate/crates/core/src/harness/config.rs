//! Flat `key=value` experiment configuration shared by every command.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::optimizer::{parse_kv, TwoTempConfig};
use crate::relaxation::TempPair;
use crate::transfer::MaskSource;

use super::Command;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// AP run settings; `seed` also seeds baselines and fine-tuning.
    pub ap: TwoTempConfig,
    /// `G` reported with the bound parameters of an `ap-train` run.
    pub grad_bound: f64,
    /// `mnist` (read from the data root) or `synthetic` (seeded Gaussian blobs).
    pub dataset: String,
    /// `binary` (logistic on `binary_classes`) or `multiclass` (MLP on `train_classes`).
    pub task: String,
    pub hidden: usize,
    pub binary_classes: Vec<usize>,
    pub train_classes: Vec<usize>,
    pub new_classes: Vec<usize>,
    pub test_fraction: f64,
    pub split_seed: u64,

    pub ts_grid: Vec<f64>,
    pub eval_every: usize,

    pub sources: Vec<MaskSource>,
    pub sparsities: Vec<f64>,
    pub sizes: Vec<usize>,
    pub n_seeds: usize,
    pub retrain_iters: usize,
    pub ft_beta: f64,
    pub ft_batch_size: usize,
    pub imp_rounds: usize,
    pub imp_iters: usize,
    /// Directory searched for `<source>_<sparsity>.txt` masks before generating.
    pub masks_dir: String,

    pub reshuffle_sparsities: Vec<f64>,
    pub reshuffle_size: usize,

    pub bound_dim: usize,
    pub bound_n: usize,
    pub bound_t: Vec<usize>,
    pub bound_seeds: usize,
    pub bound_c: f64,
    pub bound_t_l: f64,
    pub bound_t_s: f64,
    pub reference_steps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            ap: TwoTempConfig {
                temps: TempPair::new(100.0, 10.0).expect("valid temperatures"),
                gamma: 0.01,
                target_sparsity: 0.9,
                iterations: 4000,
                c: 0.1,
                ..TwoTempConfig::default()
            },
            grad_bound: 1.0,
            dataset: "mnist".into(),
            task: "multiclass".into(),
            hidden: 64,
            binary_classes: vec![0, 1],
            train_classes: vec![0, 1, 2, 3, 4],
            new_classes: vec![5, 6, 7, 8, 9],
            test_fraction: 0.2,
            split_seed: 0,
            ts_grid: vec![1000.0, 10.0, 1.0],
            eval_every: 20,
            sources: vec![MaskSource::Ours, MaskSource::Random, MaskSource::Imp],
            sparsities: vec![0.5, 0.8, 0.9, 0.95, 0.99],
            sizes: vec![5000, 1000, 500, 100, 50],
            n_seeds: 5,
            retrain_iters: 500,
            ft_beta: 0.05,
            ft_batch_size: 32,
            imp_rounds: 5,
            imp_iters: 3000,
            masks_dir: String::new(),
            reshuffle_sparsities: vec![0.1, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99],
            reshuffle_size: 500,
            bound_dim: 5,
            bound_n: 500,
            bound_t: vec![100, 1000],
            bound_seeds: 20,
            bound_c: 1.0,
            bound_t_l: 4.0,
            bound_t_s: 2.0,
            reference_steps: 100_000,
        }
    }
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{v}` for key `{key}`")))
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Defaults tuned for each command.
    pub fn for_command(command: Command) -> Self {
        let mut cfg = Self::default();
        if command == Command::ConvergenceDemo {
            cfg.task = "binary".into();
            cfg.ap.temps = TempPair::new(1000.0, 10.0).expect("valid temperatures");
            cfg.ap.gamma = 0.05;
            cfg.ap.target_sparsity = 0.0;
            cfg.ap.iterations = 2000;
        }
        cfg
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if TwoTempConfig::KEYS.contains(&key) {
            return self.ap.set(key, value);
        }
        match key {
            "grad_bound" => self.grad_bound = num(key, value)?,
            "dataset" => match value.trim() {
                d @ ("mnist" | "synthetic") => self.dataset = d.into(),
                other => return Err(Error::Config(format!("unknown dataset `{other}`"))),
            },
            "task" => match value.trim() {
                t @ ("binary" | "multiclass") => self.task = t.into(),
                other => return Err(Error::Config(format!("unknown task `{other}`"))),
            },
            "hidden" => self.hidden = num(key, value)?,
            "binary_classes" => self.binary_classes = list(key, value)?,
            "train_classes" => self.train_classes = list(key, value)?,
            "new_classes" => self.new_classes = list(key, value)?,
            "test_fraction" => self.test_fraction = num(key, value)?,
            "split_seed" => self.split_seed = num(key, value)?,
            "ts_grid" => self.ts_grid = list(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "sources" => {
                self.sources = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        MaskSource::parse(s)
                            .ok_or_else(|| Error::Config(format!("unknown mask source `{s}`")))
                    })
                    .collect::<Result<_>>()?
            }
            "sparsities" => self.sparsities = list(key, value)?,
            "sizes" => self.sizes = list(key, value)?,
            "n_seeds" => self.n_seeds = num(key, value)?,
            "retrain_iters" => self.retrain_iters = num(key, value)?,
            "ft_beta" => self.ft_beta = num(key, value)?,
            "ft_batch_size" => self.ft_batch_size = num(key, value)?,
            "imp_rounds" => self.imp_rounds = num(key, value)?,
            "imp_iters" => self.imp_iters = num(key, value)?,
            "masks_dir" => self.masks_dir = value.trim().into(),
            "reshuffle_sparsities" => self.reshuffle_sparsities = list(key, value)?,
            "reshuffle_size" => self.reshuffle_size = num(key, value)?,
            "bound_dim" => self.bound_dim = num(key, value)?,
            "bound_n" => self.bound_n = num(key, value)?,
            "bound_T" => self.bound_t = list(key, value)?,
            "bound_seeds" => self.bound_seeds = num(key, value)?,
            "bound_c" => self.bound_c = num(key, value)?,
            "bound_t_l" => self.bound_t_l = num(key, value)?,
            "bound_t_s" => self.bound_t_s = num(key, value)?,
            "reference_steps" => self.reference_steps = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file on top of the current values.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.ap.validate()?;
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.sparsities.iter().chain(&self.reshuffle_sparsities).any(|s| !(0.0..1.0).contains(s)) {
            return bad("sparsities must lie in [0, 1)");
        }
        if self.hidden == 0 || self.n_seeds == 0 || self.imp_rounds == 0 || self.eval_every == 0 {
            return bad("hidden, n_seeds, imp_rounds and eval_every must be positive");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1)");
        }
        if self.binary_classes.len() != 2 {
            return bad("binary_classes needs exactly two classes");
        }
        if self.train_classes.len() != self.new_classes.len() || self.train_classes.is_empty() {
            return bad("train_classes and new_classes must have the same nonzero length");
        }
        TempPair::new(self.bound_t_l, self.bound_t_s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Shrinks widths, iteration counts and dataset sizes by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::Config(format!("--scale must lie in (0, 1], got {factor}")));
        }
        let s = |n: usize| ((n as f64 * factor).round() as usize).max(1);
        let mut c = self.clone();
        c.hidden = s(c.hidden);
        c.ap.iterations = s(c.ap.iterations);
        c.eval_every = s(c.eval_every);
        c.retrain_iters = s(c.retrain_iters);
        c.imp_iters = s(c.imp_iters).max(c.imp_rounds);
        c.sizes = c.sizes.iter().map(|&n| s(n)).collect();
        c.reshuffle_size = s(c.reshuffle_size);
        c.bound_n = s(c.bound_n);
        c.bound_t = c.bound_t.iter().map(|&n| s(n)).collect();
        c.reference_steps = s(c.reference_steps);
        Ok(c)
    }

    /// Every key with its current value, in a form [`Self::apply_kv`] accepts.
    pub fn to_kv_string(&self) -> String {
        let mut out = self.ap.to_kv_string();
        let srcs: Vec<&str> = self.sources.iter().map(|s| s.tag()).collect();
        let rows: [(&str, String); 30] = [
            ("grad_bound", self.grad_bound.to_string()),
            ("dataset", self.dataset.clone()),
            ("task", self.task.clone()),
            ("hidden", self.hidden.to_string()),
            ("binary_classes", join(&self.binary_classes)),
            ("train_classes", join(&self.train_classes)),
            ("new_classes", join(&self.new_classes)),
            ("test_fraction", self.test_fraction.to_string()),
            ("split_seed", self.split_seed.to_string()),
            ("ts_grid", join(&self.ts_grid)),
            ("eval_every", self.eval_every.to_string()),
            ("sources", srcs.join(",")),
            ("sparsities", join(&self.sparsities)),
            ("sizes", join(&self.sizes)),
            ("n_seeds", self.n_seeds.to_string()),
            ("retrain_iters", self.retrain_iters.to_string()),
            ("ft_beta", self.ft_beta.to_string()),
            ("ft_batch_size", self.ft_batch_size.to_string()),
            ("imp_rounds", self.imp_rounds.to_string()),
            ("imp_iters", self.imp_iters.to_string()),
            ("masks_dir", self.masks_dir.clone()),
            ("reshuffle_sparsities", join(&self.reshuffle_sparsities)),
            ("reshuffle_size", self.reshuffle_size.to_string()),
            ("bound_dim", self.bound_dim.to_string()),
            ("bound_n", self.bound_n.to_string()),
            ("bound_T", join(&self.bound_t)),
            ("bound_seeds", self.bound_seeds.to_string()),
            ("bound_c", self.bound_c.to_string()),
            ("bound_t_l", self.bound_t_l.to_string()),
            ("bound_t_s", self.bound_t_s.to_string()),
        ];
        for (k, v) in rows {
            writeln!(out, "{k}={v}").unwrap();
        }
        writeln!(out, "reference_steps={}", self.reference_steps).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let mut cfg = ExperimentConfig::for_command(Command::TransferGrid);
        cfg.set("sizes", "100, 50").unwrap();
        cfg.set("sources", "ours,rnd").unwrap();
        cfg.set("masks_dir", "").unwrap();
        let mut back = ExperimentConfig::default();
        back.apply_kv(&cfg.to_kv_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set("nonsense", "1").is_err());
        assert!(cfg.set("sizes", "10,x").is_err());
        assert!(cfg.set("sources", "ours,magic").is_err());
        assert!(cfg.set("task", "regression").is_err());
        assert!(cfg.set("dataset", "imagenet").is_err());
        cfg.set("sparsities", "0.5,1.0").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn scale_shrinks_sizes_and_iterations() {
        let cfg = ExperimentConfig::default().scaled(0.1).unwrap();
        assert_eq!(cfg.sizes, vec![500, 100, 50, 10, 5]);
        assert_eq!(cfg.ap.iterations, 400);
        assert_eq!(cfg.hidden, 6);
        assert!(ExperimentConfig::default().scaled(0.0).is_err());
        assert_eq!(ExperimentConfig::default().scaled(1.0).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn convergence_defaults() {
        let cfg = ExperimentConfig::for_command(Command::ConvergenceDemo);
        assert_eq!(cfg.ap.temps.low(), 1000.0);
        assert_eq!(cfg.ts_grid, vec![1000.0, 10.0, 1.0]);
        cfg.validate().unwrap();
    }
}
