//! Architecture-pruning training loop.
//!
//! Joint SGD on the mask logits `w` and the weights `θ`: the forward pass uses
//! the relaxed mask `σ(t_l w)`, the logit update uses the two-temperature
//! gradient plus a `γ‖1 + w‖²` pull towards `−1`, and the weight update is
//! ordinary SGD on `L + γ‖θ‖²`. Once the number of positive logits reaches the
//! target count the mask is frozen and only `θ` keeps training.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Batch, MaskMode, MaskedMlp};
use crate::relaxation::{harden_mask, two_temp_grad, BoundParams, HardMask, TempPair};

/// Hyper-parameters of one AP run.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTempConfig {
    pub temps: TempPair,
    /// `γ`: weight decay on `θ` and the pull of `w` towards `−1`.
    pub gamma: f64,
    /// Fraction of connections to prune; `0` disables the freeze.
    pub target_sparsity: f64,
    /// Number of iterations `T`.
    pub iterations: usize,
    /// Mask step constant, `α_i = c/√i`.
    pub c: f64,
    /// Constant weight step.
    pub beta: f64,
    pub batch_size: usize,
    pub eps_theta: f64,
    pub eps_w: f64,
    pub seed: u64,
}

impl Default for TwoTempConfig {
    fn default() -> Self {
        Self {
            temps: TempPair::new(100.0, 10.0).expect("valid default temperatures"),
            gamma: 1e-3,
            target_sparsity: 0.0,
            iterations: 1000,
            c: 0.1,
            beta: 0.05,
            batch_size: 32,
            eps_theta: 0.1,
            eps_w: 0.1,
            seed: 0,
        }
    }
}

impl TwoTempConfig {
    /// Keys accepted by [`Self::set`], in file order.
    pub const KEYS: [&'static str; 11] = [
        "t_l",
        "t_s",
        "gamma",
        "target_sparsity",
        "T",
        "c",
        "beta",
        "batch_size",
        "eps_theta",
        "eps_w",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.target_sparsity) {
            return bad(format!(
                "target_sparsity must lie in [0, 1), got {}",
                self.target_sparsity
            ));
        }
        for (name, v) in [
            ("c", self.c),
            ("beta", self.beta),
            ("eps_theta", self.eps_theta),
            ("eps_w", self.eps_w),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// Sets one field from its key. Temperatures are re-validated as a pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse `{v}` for key `{key}`")))
        }
        match key {
            "t_l" => {
                let t_l = num(key, value)?;
                self.temps = TempPair::new(t_l, self.temps.high().min(t_l))
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            "t_s" => {
                self.temps = TempPair::new(self.temps.low(), num(key, value)?)
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            "gamma" => self.gamma = num(key, value)?,
            "target_sparsity" => self.target_sparsity = num(key, value)?,
            "T" => self.iterations = num(key, value)?,
            "c" => self.c = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "eps_theta" => self.eps_theta = num(key, value)?,
            "eps_w" => self.eps_w = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a `key=value` file. Blank lines and `#` comments are ignored.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        for key in Self::KEYS {
            let v = match key {
                "t_l" => self.temps.low().to_string(),
                "t_s" => self.temps.high().to_string(),
                "gamma" => self.gamma.to_string(),
                "target_sparsity" => self.target_sparsity.to_string(),
                "T" => self.iterations.to_string(),
                "c" => self.c.to_string(),
                "beta" => self.beta.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "eps_theta" => self.eps_theta.to_string(),
                "eps_w" => self.eps_w.to_string(),
                _ => self.seed.to_string(),
            };
            writeln!(s, "{key}={v}").unwrap();
        }
        s
    }
}

/// Splits `key=value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// `α_i = c/√i` for `i ≥ 1`.
pub fn lr_schedule(i: usize, c: f64) -> Result<f64> {
    if i == 0 {
        return Err(Error::InvalidInput("iterations are counted from 1".into()));
    }
    Ok(c / (i as f64).sqrt())
}

/// `B` indices drawn uniformly with replacement from `0..n`.
pub fn sample_batch<R: Rng + ?Sized>(rng: &mut R, n: usize, batch_size: usize) -> Vec<usize> {
    (0..batch_size).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iter: usize,
    /// Minibatch loss `L + γ‖θ‖²` at the start of the iteration.
    pub loss: f64,
    /// Sparsity of `1[w > 0]` after the iteration.
    pub sparsity: f64,
    pub surviving: usize,
    pub frozen: bool,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: MaskedMlp,
    /// Completed iterations.
    pub iteration: usize,
    pub mask_frozen: bool,
    /// Iteration after which the mask froze.
    pub frozen_at: Option<usize>,
    /// Running `max |w_i|` while the mask was still moving.
    pub max_abs_w: f64,
    pub history: Vec<HistoryRow>,
}

impl TrainState {
    pub fn new(model: MaskedMlp) -> Self {
        let max_abs_w = model.logits().max_abs();
        Self {
            model,
            iteration: 0,
            mask_frozen: false,
            frozen_at: None,
            max_abs_w,
            history: Vec::new(),
        }
    }

    pub fn surviving(&self) -> usize {
        self.model.logits().positive_count()
    }

    pub fn hard_mask(&self) -> HardMask {
        harden_mask(self.model.logits())
    }
}

/// One joint update of `(w, θ)` on `batch`; `w` is left alone once frozen.
/// Returns the minibatch loss at the pre-update parameters.
pub fn ap_step(state: &mut TrainState, batch: &Batch, config: &TwoTempConfig) -> Result<f64> {
    let it = state.iteration + 1;
    let t_l = config.temps.low();
    let g = state
        .model
        .loss_and_grads(batch, MaskMode::Relaxed { t_l }, config.gamma)?;
    let finite = g.loss.is_finite()
        && g.grad_theta.iter().all(|x| x.is_finite())
        && g.grad_v.iter().all(|x| x.is_finite())
        && g.grad_bias.iter().all(|x| x.is_finite());
    if !finite {
        return Err(Error::Diverged {
            iteration: it,
            what: format!("non-finite loss or gradient (loss = {})", g.loss),
        });
    }

    if !state.mask_frozen {
        let alpha = lr_schedule(it, config.c)?;
        let mask_grad = two_temp_grad(&g.grad_v, state.model.logits(), config.temps.high())?;
        let w = state.model.logits_mut().as_mut_slice();
        for (wi, mg) in w.iter_mut().zip(&mask_grad) {
            *wi -= alpha * (mg + 2.0 * config.gamma * (1.0 + *wi));
        }
        if let Some(i) = w.iter().position(|x| !x.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                what: format!("mask logit {i} became {}", w[i]),
            });
        }
        state.max_abs_w = state.max_abs_w.max(state.model.logits().max_abs());
    }

    for (t, gt) in state.model.theta_mut().iter_mut().zip(&g.grad_theta) {
        *t -= config.beta * gt;
    }
    if let Some(b) = state.model.bias_mut() {
        for (bi, gb) in b.iter_mut().zip(&g.grad_bias) {
            *bi -= config.beta * gb;
        }
    }
    state.iteration = it;
    Ok(g.loss)
}

/// Surviving count an AP run freezes at: the smallest count whose fraction of
/// `d` is at least `1 − target`.
pub fn freeze_count(d: usize, target_sparsity: f64) -> usize {
    (((1.0 - target_sparsity) * d as f64 - 1e-9).ceil().max(0.0) as usize).min(d)
}

/// Freeze rule: with a nonzero target, stop updating `w` once the number of
/// positive logits is at most [`freeze_count`].
pub fn check_freeze(state: &mut TrainState, config: &TwoTempConfig) -> bool {
    if state.mask_frozen || config.target_sparsity <= 0.0 {
        return false;
    }
    let d = state.model.num_weights();
    if state.surviving() <= freeze_count(d, config.target_sparsity) {
        state.mask_frozen = true;
        state.frozen_at = Some(state.iteration);
        true
    } else {
        false
    }
}

/// If the last step pushed the positive count below `target`, restores the
/// pre-step value of just enough of the logits that crossed zero in that
/// step (those ending closest to zero first) to land exactly on `target`.
pub fn restore_overshoot(state: &mut TrainState, previous: &[f64], target: usize) -> usize {
    let now = state.surviving();
    if now >= target {
        return 0;
    }
    let w = state.model.logits().as_slice();
    let mut crossed: Vec<usize> = (0..w.len())
        .filter(|&i| previous[i] > 0.0 && w[i] <= 0.0)
        .collect();
    crossed.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let need = target - now;
    let w = state.model.logits_mut().as_mut_slice();
    for &i in crossed.iter().take(need) {
        w[i] = previous[i];
    }
    need.min(crossed.len())
}

/// Drives [`ap_step`] and [`check_freeze`] over uniformly sampled batches.
pub struct ApTrainer<'a> {
    state: TrainState,
    data: &'a Dataset,
    config: TwoTempConfig,
    rng: ChaCha8Rng,
}

impl<'a> ApTrainer<'a> {
    /// Initialises `θ_0 ~ N(0, ε_θ²)` and `w_0 ~ |N(0, ε_w²)|` on the parent
    /// architecture from `config.seed`.
    pub fn new(parent: &MaskedMlp, data: &'a Dataset, config: &TwoTempConfig) -> Result<Self> {
        let mut model = parent.clone();
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        model.init_random(&mut init_rng, config.eps_theta, config.eps_w);
        Self::from_model(model, data, config)
    }

    /// Starts from the given parameters as they are.
    pub fn from_model(model: MaskedMlp, data: &'a Dataset, config: &TwoTempConfig) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidInput("training set is empty".into()));
        }
        Error::check_len(model.n_inputs(), data.n_features())?;
        if data.class_count() > model.n_classes() {
            return Err(Error::InvalidInput(format!(
                "{} classes in data, model predicts {}",
                data.class_count(),
                model.n_classes()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            state: TrainState::new(model),
            data,
            config: config.clone(),
            rng,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    pub fn config(&self) -> &TwoTempConfig {
        &self.config
    }

    /// Batch indices the next call to [`Self::step`] would use are drawn
    /// from this generator.
    pub fn next_batch_indices(&mut self) -> Vec<usize> {
        sample_batch(&mut self.rng, self.data.len(), self.config.batch_size)
    }

    pub fn step(&mut self) -> Result<HistoryRow> {
        let idx = self.next_batch_indices();
        let batch = Batch::from_dataset(self.data, &idx)?;
        let previous = (!self.state.mask_frozen && self.config.target_sparsity > 0.0)
            .then(|| self.state.model.logits().as_slice().to_vec());
        let loss = ap_step(&mut self.state, &batch, &self.config)?;
        if let Some(prev) = previous {
            let target = freeze_count(self.state.model.num_weights(), self.config.target_sparsity);
            restore_overshoot(&mut self.state, &prev, target);
            check_freeze(&mut self.state, &self.config);
        }
        let surviving = self.state.surviving();
        let d = self.state.model.num_weights();
        let row = HistoryRow {
            iter: self.state.iteration,
            loss,
            sparsity: if d == 0 { 0.0 } else { 1.0 - surviving as f64 / d as f64 },
            surviving,
            frozen: self.state.mask_frozen,
        };
        self.state.history.push(row);
        Ok(row)
    }

    pub fn run(&mut self, iterations: usize) -> Result<()> {
        for _ in 0..iterations {
            self.step()?;
        }
        Ok(())
    }
}

/// Result of [`run_ap`].
#[derive(Debug, Clone)]
pub struct ApOutcome {
    /// `m_* = 1[w_T > 0]`.
    pub mask: HardMask,
    pub state: TrainState,
    pub bound: BoundParams,
}

impl ApOutcome {
    /// Whether the run reached its target sparsity.
    pub fn target_reached(&self, target_sparsity: f64) -> bool {
        target_sparsity <= 0.0
            || self.mask.popcount() <= freeze_count(self.mask.len(), target_sparsity)
    }
}

/// Full AP run: initialise, train for `config.iterations` steps, harden.
/// `grad_bound` is the `G` reported in the bound parameters.
pub fn run_ap(
    parent: &MaskedMlp,
    train: &Dataset,
    config: &TwoTempConfig,
    grad_bound: f64,
) -> Result<ApOutcome> {
    let mut trainer = ApTrainer::new(parent, train, config)?;
    trainer.run(config.iterations)?;
    let state = trainer.into_state();
    Ok(ApOutcome {
        mask: state.hard_mask(),
        bound: BoundParams {
            grad_bound,
            max_abs_w: state.max_abs_w,
            iterations: state.iteration,
            step_constant: config.c,
            temps: config.temps,
        },
        state,
    })
}

/// `iter,loss,sparsity,surviving,frozen`.
pub fn write_history_csv(path: &Path, history: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "loss", "sparsity", "surviving", "frozen"])?;
    for r in history {
        w.write_record([
            r.iter.to_string(),
            r.loss.to_string(),
            r.sparsity.to_string(),
            r.surviving.to_string(),
            u8::from(r.frozen).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
