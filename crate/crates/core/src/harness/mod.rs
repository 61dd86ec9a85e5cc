//! Experiment commands behind the `archprune` binary.
//!
//! Every command reads an [`ExperimentConfig`] (defaults, then an optional
//! `key=value` file, then `--scale`, then `--set` overrides), writes its
//! outputs under the output directory and returns a [`RunSummary`]. Outputs
//! depend only on the configuration and seed.

pub mod config;
mod plot;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::ExperimentConfig;

use crate::baselines::{
    imp_prune, layerwise_counts, layerwise_density, layerwise_reshuffle, random_prune,
    read_mask_file, write_mask_file, ImpConfig,
};
use crate::bound::{
    empirical_bound_check_with, estimate_grad_bound, reference_loss, BoundCheckConfig,
    BoundReport, ConvexInstance,
};
use crate::data::{
    binary_task, class_subset, load_mnist_split, mnist_paths, synthetic_blobs, train_test_split,
    Dataset, MnistSplit,
};
use crate::error::{Error, Result};
use crate::model::{MaskMode, MaskedMlp};
use crate::optimizer::{run_ap, write_history_csv, ApTrainer, HistoryRow, TwoTempConfig};
use crate::relaxation::{HardMask, TempPair};
use crate::transfer::{
    transfer_experiment, write_results_csv, write_summary_csv, MaskEntry, MaskSource, SgdSettings,
    TransferConfig, TransferReport,
};

/// How to obtain the MNIST files when they are missing.
pub const FETCH_HINT: &str =
    "run `python3 scripts/fetch_mnist.py` (writes to $APDATA/mnist, default ./data/mnist)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    ApTrain,
    TransferGrid,
    Baseline,
    ConvergenceDemo,
    ReshuffleEval,
    BoundCheck,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::ApTrain,
        Command::TransferGrid,
        Command::Baseline,
        Command::ConvergenceDemo,
        Command::ReshuffleEval,
        Command::BoundCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::ApTrain => "ap-train",
            Command::TransferGrid => "transfer-grid",
            Command::Baseline => "baseline",
            Command::ConvergenceDemo => "convergence-demo",
            Command::ReshuffleEval => "reshuffle-eval",
            Command::BoundCheck => "bound-check",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

/// One invocation: command plus the shared flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub scale: f64,
    /// `key=value` strings applied after the config file.
    pub overrides: Vec<String>,
}

impl ExperimentSpec {
    pub fn new(command: Command, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            command,
            config_path: None,
            out_dir: out_dir.into(),
            seed: None,
            jobs: 1,
            scale: 1.0,
            overrides: Vec::new(),
        }
    }

    pub fn with_override(mut self, kv: &str) -> Self {
        self.overrides.push(kv.to_string());
        self
    }

    pub fn resolve_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::for_command(self.command);
        if let Some(p) = &self.config_path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply_kv(&text)?;
        }
        let mut cfg = cfg.scaled(self.scale)?;
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.ap.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Cells completed and the ones that failed or were skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub completed: usize,
    pub failed: Vec<String>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.failed.is_empty())
    }
}

/// `$APDATA` if set, otherwise `./data`.
pub fn data_root() -> PathBuf {
    std::env::var_os("APDATA").map_or_else(|| PathBuf::from("data"), PathBuf::from)
}

/// Train and test splits of MNIST under `root/mnist`. Without the `t10k`
/// files the training file is split `test_fraction` at random.
pub fn load_mnist_splits(root: &Path, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let dir = root.join("mnist");
    let (images, labels) = mnist_paths(&dir, MnistSplit::Train);
    if !images.exists() || !labels.exists() {
        return Err(Error::MissingData { path: dir, hint: FETCH_HINT.into() });
    }
    let train = load_mnist_split(&dir, MnistSplit::Train)?;
    let (ti, tl) = mnist_paths(&dir, MnistSplit::Test);
    if ti.exists() && tl.exists() {
        Ok((train, load_mnist_split(&dir, MnistSplit::Test)?))
    } else {
        info!("no MNIST test files in {}, holding out {test_fraction} of the training file", dir.display());
        Ok(train_test_split(&train, test_fraction, seed))
    }
}

fn load_splits(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset.as_str() {
        "synthetic" => {
            let all = synthetic_blobs(10, 400, 32, 0.35, cfg.split_seed);
            Ok(train_test_split(&all, cfg.test_fraction.max(0.2), cfg.split_seed))
        }
        _ => load_mnist_splits(&data_root(), cfg.test_fraction, cfg.split_seed),
    }
}

/// A `factor` fraction of `data` drawn without replacement, in original order.
pub fn scale_dataset(data: &Dataset, factor: f64, seed: u64) -> Dataset {
    if factor >= 1.0 {
        return data.clone();
    }
    let k = ((data.len() as f64 * factor).round() as usize).clamp(1, data.len());
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), data.len(), k).into_vec();
    idx.sort_unstable();
    data.subset(&idx)
}

/// Training task for AP and IMP plus the new task's fine-tuning pool and test set.
#[derive(Debug, Clone)]
pub struct TransferTasks {
    pub train: Dataset,
    pub pool: Dataset,
    pub test: Dataset,
}

pub fn transfer_tasks(cfg: &ExperimentConfig, scale: f64) -> Result<TransferTasks> {
    let (train, test) = load_splits(cfg)?;
    Ok(TransferTasks {
        train: scale_dataset(&class_subset(&train, &cfg.train_classes)?, scale, cfg.split_seed),
        pool: class_subset(&train, &cfg.new_classes)?,
        test: class_subset(&test, &cfg.new_classes)?,
    })
}

/// The two-class training set used by the convergence demo.
pub fn binary_train_set(cfg: &ExperimentConfig, scale: f64) -> Result<Dataset> {
    let (train, _) = load_splits(cfg)?;
    let [a, b] = [cfg.binary_classes[0], cfg.binary_classes[1]];
    Ok(scale_dataset(&binary_task(&train, a, b)?, scale, cfg.split_seed))
}

/// Parent network: logistic without bias for the binary task, otherwise a
/// one-hidden-layer ReLU MLP.
pub fn parent_model(cfg: &ExperimentConfig, n_features: usize) -> Result<MaskedMlp> {
    if cfg.task == "binary" {
        MaskedMlp::logistic(n_features, false)
    } else {
        MaskedMlp::mlp(&[n_features, cfg.hidden, cfg.train_classes.len()])
    }
}

pub fn transfer_config(cfg: &ExperimentConfig) -> TransferConfig {
    TransferConfig {
        retrain_iters: cfg.retrain_iters,
        sgd: SgdSettings {
            beta: cfg.ft_beta,
            batch_size: cfg.ft_batch_size,
            gamma: 0.0,
        },
        eps_theta: cfg.ap.eps_theta,
        n_seeds: cfg.n_seeds,
        base_seed: cfg.ap.seed,
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mask_file_name(source: MaskSource, sparsity: f64) -> String {
    format!("{}_{sparsity}.txt", source.tag())
}

/// Builds a mask from scratch: AP at the target sparsity, random pruning or IMP.
pub fn generate_mask(
    source: MaskSource,
    sparsity: f64,
    parent: &MaskedMlp,
    train: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<HardMask> {
    let d = parent.num_weights();
    match source {
        MaskSource::Ours => {
            let ap = TwoTempConfig { target_sparsity: sparsity, ..cfg.ap.clone() };
            let out = run_ap(parent, train, &ap, cfg.grad_bound)?;
            if !out.target_reached(sparsity) {
                return Err(Error::TargetNotReached {
                    target: sparsity,
                    reached: out.mask.sparsity(),
                    iterations: ap.iterations,
                });
            }
            Ok(out.mask)
        }
        MaskSource::Random => random_prune(d, sparsity, cfg.ap.seed),
        MaskSource::Imp => {
            let imp = ImpConfig {
                rounds: cfg.imp_rounds,
                total_iters: cfg.imp_iters,
                sgd: SgdSettings {
                    beta: cfg.ap.beta,
                    batch_size: cfg.ap.batch_size,
                    gamma: 0.0,
                },
                eps_theta: cfg.ap.eps_theta,
                seed: cfg.ap.seed,
            };
            Ok(imp_prune(parent, train, sparsity, &imp)?.mask)
        }
        MaskSource::ReshuffledOurs | MaskSource::ReshuffledImp => Err(Error::InvalidInput(
            "reshuffled masks are derived from an existing mask".into(),
        )),
    }
}

/// Loads `<masks_dir>/<source>_<sparsity>.txt` when present, otherwise
/// generates the mask. Every mask is saved under `<out>/masks`. Cells run in
/// parallel; a failed cell is reported and left out.
pub fn obtain_masks(
    cfg: &ExperimentConfig,
    parent: &MaskedMlp,
    train: &Dataset,
    sources: &[MaskSource],
    sparsities: &[f64],
    out: &Path,
    jobs: usize,
) -> Result<(Vec<MaskEntry>, Vec<String>)> {
    let dir = out.join("masks");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cells: Vec<(MaskSource, f64)> = sources
        .iter()
        .flat_map(|&src| sparsities.iter().map(move |&s| (src, s)))
        .collect();
    let results: Vec<Result<HardMask>> = thread_pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|&(src, s)| {
                let cached = Path::new(&cfg.masks_dir).join(mask_file_name(src, s));
                if !cfg.masks_dir.is_empty() && cached.exists() {
                    let m = read_mask_file(&cached)?;
                    Error::check_len(parent.num_weights(), m.len())?;
                    return Ok(m);
                }
                generate_mask(src, s, parent, train, cfg)
            })
            .collect()
    });
    let mut entries = Vec::new();
    let mut failed = Vec::new();
    for ((source, sparsity), r) in cells.into_iter().zip(results) {
        match r {
            Ok(mask) => {
                write_mask_file(&dir.join(mask_file_name(source, sparsity)), &mask)?;
                entries.push(MaskEntry { source, sparsity, mask });
            }
            Err(e) => {
                warn!("mask {source} sparsity={sparsity} failed: {e}");
                failed.push(format!("mask {source} sparsity={sparsity}: {e}"));
            }
        }
    }
    Ok((entries, failed))
}

/// One point of a convergence curve, evaluated on the full training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iter: usize,
    /// `L + γ‖θ‖²` under the relaxed mask.
    pub loss: f64,
    /// `loss + γ‖v_{t_l}‖²`, the penalised objective being compared.
    pub objective: f64,
    pub surviving: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRun {
    pub t_s: f64,
    pub curve: Vec<CurvePoint>,
    pub history: Vec<HistoryRow>,
}

impl ConvergenceRun {
    pub fn final_point(&self) -> CurvePoint {
        *self.curve.last().expect("curve includes the initial point")
    }
}

/// `(L + γ‖θ‖², L + γ‖θ‖² + γ‖σ(t_l w)‖²)` on `data`.
pub fn penalised_objective(model: &MaskedMlp, data: &Dataset, t_l: f64, gamma: f64) -> Result<(f64, f64)> {
    let mode = MaskMode::Relaxed { t_l };
    let loss = model.dataset_loss(data, mode, gamma)?;
    let v2: f64 = model.mask_values(mode)?.iter().map(|v| v * v).sum();
    Ok((loss, loss + gamma * v2))
}

/// One AP run per `t_s` in `ts_grid` with everything else from `base`,
/// evaluated every `eval_every` iterations and at the end.
pub fn convergence_runs(
    parent: &MaskedMlp,
    data: &Dataset,
    base: &TwoTempConfig,
    ts_grid: &[f64],
    eval_every: usize,
    jobs: usize,
) -> Result<Vec<Result<ConvergenceRun>>> {
    let t_l = base.temps.low();
    let run_one = |t_s: f64| -> Result<ConvergenceRun> {
        let cfg = TwoTempConfig { temps: TempPair::new(t_l, t_s)?, ..base.clone() };
        let mut tr = ApTrainer::new(parent, data, &cfg)?;
        let mut curve = Vec::new();
        let point = |tr: &ApTrainer<'_>| -> Result<CurvePoint> {
            let s = tr.state();
            let (loss, objective) = penalised_objective(&s.model, data, t_l, cfg.gamma)?;
            Ok(CurvePoint { iter: s.iteration, loss, objective, surviving: s.surviving() })
        };
        curve.push(point(&tr)?);
        for i in 1..=cfg.iterations {
            tr.step()?;
            if i % eval_every.max(1) == 0 || i == cfg.iterations {
                curve.push(point(&tr)?);
            }
        }
        Ok(ConvergenceRun { t_s, curve, history: tr.into_state().history })
    };
    Ok(thread_pool(jobs)?.install(|| ts_grid.par_iter().map(|&t| run_one(t)).collect()))
}

/// Per-layer densities before and after reshuffling one mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ReshuffleCheck {
    pub source: MaskSource,
    pub sparsity: f64,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub preserved: bool,
}

/// Reshuffles every mask within the layers of `parent` and verifies that
/// the per-layer counts are unchanged.
pub fn reshuffle_masks(
    parent: &MaskedMlp,
    masks: &[MaskEntry],
    seed: u64,
) -> Result<(Vec<MaskEntry>, Vec<ReshuffleCheck>)> {
    let part = parent.partition();
    let mut out = Vec::with_capacity(masks.len());
    let mut checks = Vec::with_capacity(masks.len());
    for (i, e) in masks.iter().enumerate() {
        let source = match e.source {
            MaskSource::Ours => MaskSource::ReshuffledOurs,
            MaskSource::Imp => MaskSource::ReshuffledImp,
            other => return Err(Error::InvalidInput(format!("cannot reshuffle a `{other}` mask"))),
        };
        let shuffled = layerwise_reshuffle(&e.mask, &part, seed.wrapping_add(i as u64))?;
        checks.push(ReshuffleCheck {
            source,
            sparsity: e.sparsity,
            before: layerwise_density(&e.mask, &part)?,
            after: layerwise_density(&shuffled, &part)?,
            preserved: layerwise_counts(&e.mask, &part)? == layerwise_counts(&shuffled, &part)?,
        });
        out.push(MaskEntry { source, sparsity: e.sparsity, mask: shuffled });
    }
    Ok((out, checks))
}

/// Runs one command end to end.
pub fn run(spec: &ExperimentSpec) -> Result<RunSummary> {
    let cfg = spec.resolve_config()?;
    let out = &spec.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("config.txt"), &cfg.to_kv_string())?;
    info!("{} -> {}", spec.command.name(), out.display());
    match spec.command {
        Command::ApTrain => cmd_ap_train(&cfg, spec),
        Command::TransferGrid => cmd_transfer_grid(&cfg, spec),
        Command::Baseline => cmd_baseline(&cfg, spec),
        Command::ConvergenceDemo => cmd_convergence_demo(&cfg, spec),
        Command::ReshuffleEval => cmd_reshuffle_eval(&cfg, spec),
        Command::BoundCheck => cmd_bound_check(&cfg, spec),
    }
}

fn cmd_ap_train(cfg: &ExperimentConfig, spec: &ExperimentSpec) -> Result<RunSummary> {
    let train = if cfg.task == "binary" {
        binary_train_set(cfg, spec.scale)?
    } else {
        transfer_tasks(cfg, spec.scale)?.train
    };
    let parent = parent_model(cfg, train.n_features())?;
    let outcome = run_ap(&parent, &train, &cfg.ap, cfg.grad_bound)?;
    let out = &spec.out_dir;
    write_history_csv(&out.join("history.csv"), &outcome.state.history)?;
    write_mask_file(&out.join("mask.txt"), &outcome.mask)?;
    outcome.state.model.save_checkpoint(&out.join("model.ckpt"))?;
    let b = &outcome.bound;
    let mut text = String::new();
    for (k, v) in [
        ("G", b.grad_bound),
        ("M", b.max_abs_w),
        ("g_max_low", b.g_max_low()),
        ("g_max_high", b.g_max_high()),
        ("C", b.error_constant()),
        ("bound", b.value()),
    ] {
        writeln!(text, "{k}={v}").unwrap();
    }
    writeln!(text, "T={}\nc={}", b.iterations, b.step_constant).unwrap();
    write_text(&out.join("bound.txt"), &text)?;
    let acc = outcome.state.model.accuracy(&train, MaskMode::Hard(&outcome.mask))?;
    println!(
        "surviving {} of {} (sparsity {:.4}), frozen at {:?}, hard-mask train accuracy {acc:.4}",
        outcome.mask.popcount(),
        outcome.mask.len(),
        outcome.mask.sparsity(),
        outcome.state.frozen_at
    );
    let mut summary = RunSummary { completed: 1, failed: Vec::new() };
    if !outcome.target_reached(cfg.ap.target_sparsity) {
        summary.failed.push(
            Error::TargetNotReached {
                target: cfg.ap.target_sparsity,
                reached: outcome.mask.sparsity(),
                iterations: cfg.ap.iterations,
            }
            .to_string(),
        );
    }
    Ok(summary)
}

fn cmd_convergence_demo(cfg: &ExperimentConfig, spec: &ExperimentSpec) -> Result<RunSummary> {
    let data = binary_train_set(cfg, spec.scale)?;
    let parent = MaskedMlp::logistic(data.n_features(), false)?;
    let results = convergence_runs(&parent, &data, &cfg.ap, &cfg.ts_grid, cfg.eval_every, spec.jobs)?;
    let out = &spec.out_dir;
    let mut summary = RunSummary::default();
    let mut runs = Vec::new();
    let mut table = csv::Writer::from_path(out.join("convergence_summary.csv"))?;
    table.write_record(["t_s", "final_loss", "final_objective", "surviving"])?;
    for (t_s, r) in cfg.ts_grid.iter().zip(results) {
        match r {
            Ok(run) => {
                let mut w = csv::Writer::from_path(out.join(format!("convergence_ts{t_s}.csv")))?;
                w.write_record(["iter", "loss", "objective", "surviving"])?;
                for p in &run.curve {
                    w.write_record([
                        p.iter.to_string(),
                        p.loss.to_string(),
                        p.objective.to_string(),
                        p.surviving.to_string(),
                    ])?;
                }
                w.flush().map_err(|e| Error::io(out, e))?;
                write_history_csv(&out.join(format!("history_ts{t_s}.csv")), &run.history)?;
                let f = run.final_point();
                table.write_record([
                    t_s.to_string(),
                    f.loss.to_string(),
                    f.objective.to_string(),
                    f.surviving.to_string(),
                ])?;
                println!(
                    "t_s={t_s}: |m|={} objective={:.6} loss={:.6}",
                    f.surviving, f.objective, f.loss
                );
                summary.completed += 1;
                runs.push(run);
            }
            Err(e) => {
                warn!("t_s={t_s} failed: {e}");
                summary.failed.push(format!("t_s={t_s}: {e}"));
            }
        }
    }
    table.flush().map_err(|e| Error::io(out, e))?;
    plot::write_convergence_plot(out, &runs)?;
    Ok(summary)
}

fn cmd_baseline(cfg: &ExperimentConfig, spec: &ExperimentSpec) -> Result<RunSummary> {
    let tasks = transfer_tasks(cfg, spec.scale)?;
    let parent = parent_model(cfg, tasks.train.n_features())?;
    let sources: Vec<MaskSource> = cfg
        .sources
        .iter()
        .copied()
        .filter(|s| matches!(s, MaskSource::Random | MaskSource::Imp))
        .collect();
    let (masks, failed) =
        obtain_masks(cfg, &parent, &tasks.train, &sources, &cfg.sparsities, &spec.out_dir, spec.jobs)?;
    let part = parent.partition();
    let mut w = csv::Writer::from_path(spec.out_dir.join("baseline_summary.csv"))?;
    w.write_record(["source", "sparsity", "surviving", "realised_sparsity", "layer_densities"])?;
    for e in &masks {
        let dens = layerwise_density(&e.mask, &part)?;
        let dens: Vec<String> = dens.iter().map(f64::to_string).collect();
        w.write_record([
            e.source.tag().to_string(),
            e.sparsity.to_string(),
            e.mask.popcount().to_string(),
            e.mask.sparsity().to_string(),
            dens.join(";"),
        ])?;
        println!("{} sparsity={}: {} surviving", e.source, e.sparsity, e.mask.popcount());
    }
    w.flush().map_err(|e| Error::io(&spec.out_dir, e))?;
    Ok(RunSummary { completed: masks.len(), failed })
}

fn cmd_transfer_grid(cfg: &ExperimentConfig, spec: &ExperimentSpec) -> Result<RunSummary> {
    let tasks = transfer_tasks(cfg, spec.scale)?;
    let parent = parent_model(cfg, tasks.train.n_features())?;
    let out = &spec.out_dir;
    let (masks, mut failed) =
        obtain_masks(cfg, &parent, &tasks.train, &cfg.sources, &cfg.sparsities, out, spec.jobs)?;
    let tc = transfer_config(cfg);
    let grid = transfer_experiment(
        &parent, &masks, &tasks.pool, &tasks.test, &cfg.sizes, &tc, cfg.split_seed, spec.jobs,
    )?;
    write_results_csv(&out.join("results.csv"), &grid.reports, tc.base_seed)?;
    write_summary_csv(&out.join("summary.csv"), &grid.reports)?;
    for &size in &cfg.sizes {
        let rows: Vec<&TransferReport> = grid.reports.iter().filter(|r| r.new_size == size).collect();
        if rows.is_empty() {
            continue;
        }
        let mut w = csv::Writer::from_path(out.join(format!("summary_size{size}.csv")))?;
        w.write_record(["source", "sparsity", "mean", "std", "n_seeds"])?;
        for r in &rows {
            w.write_record([
                r.source.tag().to_string(),
                r.sparsity.to_string(),
                r.mean.to_string(),
                r.std.to_string(),
                r.accuracies.len().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(out, e))?;
        plot::write_transfer_plot(out, size, &rows)?;
    }
    for r in &grid.reports {
        println!(
            "{} sparsity={} size={}: {:.4} ± {:.4}",
            r.source, r.sparsity, r.new_size, r.mean, r.std
        );
    }
    failed.extend(grid.skipped);
    Ok(RunSummary { completed: grid.reports.len(), failed })
}

fn cmd_reshuffle_eval(cfg: &ExperimentConfig, spec: &ExperimentSpec) -> Result<RunSummary> {
    let tasks = transfer_tasks(cfg, spec.scale)?;
    let parent = parent_model(cfg, tasks.train.n_features())?;
    let out = &spec.out_dir;
    let (masks, mut failed) = obtain_masks(
        cfg,
        &parent,
        &tasks.train,
        &[MaskSource::Ours, MaskSource::Imp],
        &cfg.reshuffle_sparsities,
        out,
        spec.jobs,
    )?;
    let (shuffled, checks) = reshuffle_masks(&parent, &masks, cfg.ap.seed)?;

    let mut dw = csv::Writer::from_path(out.join("reshuffle_density.csv"))?;
    dw.write_record(["sparsity", "source", "layer", "density_before", "density_after", "preserved"])?;
    for c in &checks {
        for (l, (b, a)) in c.before.iter().zip(&c.after).enumerate() {
            dw.write_record([
                c.sparsity.to_string(),
                c.source.tag().to_string(),
                l.to_string(),
                b.to_string(),
                a.to_string(),
                u8::from(c.preserved).to_string(),
            ])?;
        }
        if !c.preserved {
            failed.push(format!("{} sparsity={}: layer densities changed", c.source, c.sparsity));
        }
    }
    dw.flush().map_err(|e| Error::io(out, e))?;

    let tc = transfer_config(cfg);
    let grid = transfer_experiment(
        &parent,
        &shuffled,
        &tasks.pool,
        &tasks.test,
        &[cfg.reshuffle_size],
        &tc,
        cfg.split_seed,
        spec.jobs,
    )?;
    failed.extend(grid.skipped.iter().cloned());
    write_results_csv(&out.join("reshuffle_results.csv"), &grid.reports, tc.base_seed)?;

    let find = |src: MaskSource, s: f64| grid.reports.iter().find(|r| r.source == src && r.sparsity == s);
    let mut w = csv::Writer::from_path(out.join("reshuffle.csv"))?;
    w.write_record([
        "sparsity",
        "reshuffle_ours_mean",
        "reshuffle_ours_std",
        "reshuffle_imp_mean",
        "reshuffle_imp_std",
    ])?;
    for &s in &cfg.reshuffle_sparsities {
        let cell = |src| find(src, s).map_or((f64::NAN, f64::NAN), |r| (r.mean, r.std));
        let (om, os) = cell(MaskSource::ReshuffledOurs);
        let (im, is) = cell(MaskSource::ReshuffledImp);
        w.write_record([s, om, os, im, is].map(|x| x.to_string()))?;
        println!("sparsity={s}: reshuffled ours {om:.4} ± {os:.4}, reshuffled imp {im:.4} ± {is:.4}");
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    let expected = 2 * cfg.reshuffle_sparsities.len();
    if grid.reports.len() < expected && failed.is_empty() {
        failed.push(format!("{} of {expected} cells completed", grid.reports.len()));
    }
    Ok(RunSummary { completed: grid.reports.len(), failed })
}

/// The bound check behind `bound-check`: one reference run and `G`
/// estimate shared by every horizon in `cfg.bound_t`.
pub fn bound_reports(cfg: &ExperimentConfig) -> Result<Vec<BoundReport>> {
    let inst = ConvexInstance::logistic(cfg.bound_dim, cfg.bound_n, cfg.ap.seed)?;
    let base = BoundCheckConfig {
        temps: TempPair::new(cfg.bound_t_l, cfg.bound_t_s)?,
        c: cfg.bound_c,
        eps_w: cfg.ap.eps_w,
        seed: cfg.ap.seed,
        reference_steps: cfg.reference_steps,
        ..BoundCheckConfig::default()
    };
    let g = estimate_grad_bound(&inst, base.grad_samples, base.grad_inflation, base.seed);
    let reference = reference_loss(&inst, base.temps.low(), base.reference_steps, base.reference_lr)?;
    cfg.bound_t
        .iter()
        .map(|&t| {
            let c = BoundCheckConfig { iterations: t, ..base.clone() };
            empirical_bound_check_with(&inst, &c, cfg.bound_seeds, reference, g)
        })
        .collect()
}

fn cmd_bound_check(cfg: &ExperimentConfig, spec: &ExperimentSpec) -> Result<RunSummary> {
    let reports = bound_reports(cfg)?;
    let mut w = csv::Writer::from_path(spec.out_dir.join("bound_check.csv"))?;
    w.write_record([
        "T", "n_seeds", "mean_gap", "max_gap", "reference_loss", "G", "M", "C", "bound", "satisfied",
    ])?;
    for r in &reports {
        let max_gap = r.gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        w.write_record([
            r.iterations.to_string(),
            r.n_seeds.to_string(),
            r.mean_gap.to_string(),
            max_gap.to_string(),
            r.reference_loss.to_string(),
            r.grad_bound.to_string(),
            r.max_abs_w.to_string(),
            r.error_constant.to_string(),
            r.bound.to_string(),
            u8::from(r.satisfied).to_string(),
        ])?;
        println!(
            "T={}: mean gap {:.6} vs bound {:.6} ({})",
            r.iterations,
            r.mean_gap,
            r.bound,
            if r.satisfied { "holds" } else { "violated" }
        );
    }
    w.flush().map_err(|e| Error::io(&spec.out_dir, e))?;
    Ok(RunSummary { completed: reports.len(), failed: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(Command::parse(c.name()), Some(c));
        }
        assert_eq!(Command::parse("train"), None);
    }

    #[test]
    fn overrides_and_seed_flag_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.txt");
        std::fs::write(&p, "gamma=0.5\nseed=3\n").unwrap();
        let mut spec = ExperimentSpec::new(Command::ApTrain, dir.path()).with_override("gamma=0.25");
        spec.config_path = Some(p);
        let cfg = spec.resolve_config().unwrap();
        assert_eq!(cfg.ap.gamma, 0.25);
        assert_eq!(cfg.ap.seed, 3);
        spec.seed = Some(9);
        assert_eq!(spec.resolve_config().unwrap().ap.seed, 9);
        let bad = ExperimentSpec::new(Command::ApTrain, dir.path()).with_override("warp=9");
        assert!(bad.resolve_config().is_err());
    }

    #[test]
    fn missing_mnist_is_reported_with_hint() {
        let dir = tempfile::tempdir().unwrap();
        match load_mnist_splits(dir.path(), 0.2, 0) {
            Err(Error::MissingData { hint, .. }) => assert!(hint.contains("fetch_mnist.py")),
            other => panic!("expected missing data, got {other:?}"),
        }
    }

    #[test]
    fn scale_dataset_keeps_order_and_fraction() {
        let d = synthetic_blobs(2, 50, 3, 0.1, 0);
        let s = scale_dataset(&d, 0.1, 4);
        assert_eq!(s.len(), 10);
        assert_eq!(scale_dataset(&d, 1.0, 4), d);
    }

    #[test]
    fn reshuffle_preserves_layer_counts() {
        let parent = MaskedMlp::mlp(&[6, 4, 3]).unwrap();
        let masks = vec![MaskEntry {
            source: MaskSource::Ours,
            sparsity: 0.5,
            mask: random_prune(parent.num_weights(), 0.5, 2).unwrap(),
        }];
        let (out, checks) = reshuffle_masks(&parent, &masks, 1).unwrap();
        assert_eq!(out[0].source, MaskSource::ReshuffledOurs);
        assert!(checks[0].preserved);
        assert_eq!(checks[0].before, checks[0].after);
        let rnd = vec![MaskEntry { source: MaskSource::Random, ..masks[0].clone() }];
        assert!(reshuffle_masks(&parent, &rnd, 1).is_err());
    }
}
