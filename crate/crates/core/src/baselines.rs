//! Comparison masks: random pruning, iterative magnitude pruning (IMP) and
//! layer-wise reshuffling, plus the run-length-encoded mask file format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::MaskedMlp;
use crate::relaxation::HardMask;
use crate::transfer::{masked_sgd, SgdSettings};

/// Contiguous per-layer blocks of the flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPartition {
    sizes: Vec<usize>,
}

impl LayerPartition {
    pub fn new(sizes: Vec<usize>) -> Self {
        Self { sizes }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len()
    }

    /// `(start, end)` index range of each layer.
    pub fn ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.sizes
            .iter()
            .map(|&s| {
                let r = (start, start + s);
                start += s;
                r
            })
            .collect()
    }
}

/// Number of survivors at a given sparsity: `round((1 − sparsity)·D)`.
pub fn surviving_count(d: usize, sparsity: f64) -> usize {
    (((1.0 - sparsity) * d as f64).round() as usize).min(d)
}

fn check_sparsity(sparsity: f64) -> Result<()> {
    if (0.0..1.0).contains(&sparsity) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "sparsity must lie in [0, 1), got {sparsity}"
        )))
    }
}

/// Uniformly random mask with exactly `round((1 − sparsity)·D)` ones.
pub fn random_prune(d: usize, sparsity: f64, seed: u64) -> Result<HardMask> {
    check_sparsity(sparsity)?;
    let keep = surviving_count(d, sparsity);
    let mut bits = vec![false; d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in sample(&mut rng, d, keep) {
        bits[i] = true;
    }
    Ok(HardMask::from_bits(bits))
}

/// Per-layer surviving fraction `1ᵀm^(l) / D^(l)`.
pub fn layerwise_density(mask: &HardMask, partition: &LayerPartition) -> Result<Vec<f64>> {
    Error::check_len(partition.total(), mask.len())?;
    Ok(partition
        .ranges()
        .into_iter()
        .map(|(a, b)| {
            let on = mask.bits()[a..b].iter().filter(|&&x| x).count();
            if b == a {
                0.0
            } else {
                on as f64 / (b - a) as f64
            }
        })
        .collect())
}

/// Per-layer surviving counts.
pub fn layerwise_counts(mask: &HardMask, partition: &LayerPartition) -> Result<Vec<usize>> {
    Error::check_len(partition.total(), mask.len())?;
    Ok(partition
        .ranges()
        .into_iter()
        .map(|(a, b)| mask.bits()[a..b].iter().filter(|&&x| x).count())
        .collect())
}

/// Redraws surviving positions uniformly inside each layer, keeping every
/// layer's count.
pub fn layerwise_reshuffle(
    mask: &HardMask,
    partition: &LayerPartition,
    seed: u64,
) -> Result<HardMask> {
    let counts = layerwise_counts(mask, partition)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = vec![false; mask.len()];
    for ((a, b), k) in partition.ranges().into_iter().zip(counts) {
        for i in sample(&mut rng, b - a, k) {
            bits[a + i] = true;
        }
    }
    Ok(HardMask::from_bits(bits))
}

/// Keeps the `keep` largest-magnitude weights among those surviving in
/// `current`. Ties go to the lower index.
pub fn magnitude_prune(theta: &[f64], current: &HardMask, keep: usize) -> Result<HardMask> {
    Error::check_len(theta.len(), current.len())?;
    let mut alive: Vec<usize> = (0..theta.len()).filter(|&i| current.get(i)).collect();
    if keep > alive.len() {
        return Err(Error::InvalidInput(format!(
            "cannot keep {keep} of {} surviving weights",
            alive.len()
        )));
    }
    alive.sort_by(|&a, &b| theta[b].abs().total_cmp(&theta[a].abs()).then(a.cmp(&b)));
    let mut bits = vec![false; theta.len()];
    for &i in &alive[..keep] {
        bits[i] = true;
    }
    Ok(HardMask::from_bits(bits))
}

/// Surviving fraction after each IMP round: `(1 − sparsity)^(k/rounds)`.
pub fn imp_schedule(sparsity: f64, rounds: usize) -> Vec<f64> {
    (1..=rounds)
        .map(|k| (1.0 - sparsity).powf(k as f64 / rounds as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpConfig {
    pub rounds: usize,
    /// Training iterations across all rounds; each round gets `total / rounds`.
    pub total_iters: usize,
    pub sgd: SgdSettings,
    pub eps_theta: f64,
    pub seed: u64,
}

impl Default for ImpConfig {
    fn default() -> Self {
        Self {
            rounds: 5,
            total_iters: 2000,
            sgd: SgdSettings::default(),
            eps_theta: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImpResult {
    pub mask: HardMask,
    /// Mask after each round, densest first.
    pub round_masks: Vec<HardMask>,
}

/// Iterative magnitude pruning with rewinding to the initial weights.
///
/// Trains the dense parent, then for each round prunes the globally
/// smallest surviving weights down to the geometric schedule, rewinds the
/// survivors to their initial values and retrains. Biases are never pruned.
pub fn imp_prune(
    parent: &MaskedMlp,
    train: &Dataset,
    sparsity: f64,
    config: &ImpConfig,
) -> Result<ImpResult> {
    check_sparsity(sparsity)?;
    if config.rounds == 0 {
        return Err(Error::InvalidInput("IMP needs at least one round".into()));
    }
    let d = parent.num_weights();
    if sparsity == 0.0 {
        return Ok(ImpResult {
            mask: HardMask::ones(d),
            round_masks: vec![HardMask::ones(d); config.rounds],
        });
    }
    let per_round = config.total_iters / config.rounds;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = parent.clone();
    model.init_theta(&mut rng, config.eps_theta);
    let init = model.clone();

    let mut mask = HardMask::ones(d);
    masked_sgd(&mut model, &mask, train, per_round, &config.sgd, &mut rng)?;

    let schedule = imp_schedule(sparsity, config.rounds);
    let mut round_masks = Vec::with_capacity(config.rounds);
    for (k, frac) in schedule.iter().enumerate() {
        let keep = if k + 1 == config.rounds {
            surviving_count(d, sparsity)
        } else {
            ((frac * d as f64).round() as usize).min(mask.popcount())
        };
        mask = magnitude_prune(model.theta(), &mask, keep)?;
        round_masks.push(mask.clone());
        if k + 1 < config.rounds {
            model = init.clone();
            masked_sgd(&mut model, &mask, train, per_round, &config.sgd, &mut rng)?;
        }
    }
    Ok(ImpResult { mask, round_masks })
}

/// Writes `D=<int> sparsity=<float>` followed by one line of run lengths.
///
/// The run line starts with the value of the first run (`0` or `1`) and then
/// lists the lengths of alternating runs, e.g. `1 3 2 5` is
/// `1110011111`. The stored sparsity is the realised `1 − |m|/D`.
pub fn encode_mask(mask: &HardMask) -> String {
    let mut s = String::new();
    writeln!(s, "D={} sparsity={:?}", mask.len(), mask.sparsity()).unwrap();
    let bits = mask.bits();
    let first = bits.first().copied().unwrap_or(false);
    let mut line = vec![u8::from(first).to_string()];
    let mut run = 0usize;
    let mut cur = first;
    for &b in bits {
        if b == cur {
            run += 1;
        } else {
            line.push(run.to_string());
            cur = b;
            run = 1;
        }
    }
    if run > 0 {
        line.push(run.to_string());
    }
    writeln!(s, "{}", line.join(" ")).unwrap();
    s
}

pub fn decode_mask(text: &str) -> std::result::Result<HardMask, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty mask file")?;
    let mut d = None;
    let mut sparsity = None;
    for tok in header.split_whitespace() {
        match tok.split_once('=') {
            Some(("D", v)) => d = Some(v.parse::<usize>().map_err(|e| e.to_string())?),
            Some(("sparsity", v)) => {
                sparsity = Some(v.parse::<f64>().map_err(|e| e.to_string())?)
            }
            _ => return Err(format!("unexpected header token `{tok}`")),
        }
    }
    let d = d.ok_or("header lacks D=")?;
    let sparsity = sparsity.ok_or("header lacks sparsity=")?;
    let runs = lines.next().ok_or("missing run-length line")?;
    let mut toks = runs.split_whitespace();
    let mut cur = match toks.next() {
        Some("0") => false,
        Some("1") => true,
        other => return Err(format!("bad first-bit token {other:?}")),
    };
    let mut bits = Vec::with_capacity(d);
    for t in toks {
        let n: usize = t.parse().map_err(|e: std::num::ParseIntError| e.to_string())?;
        if n == 0 {
            return Err("zero-length run".into());
        }
        bits.extend(std::iter::repeat_n(cur, n));
        cur = !cur;
    }
    if bits.len() != d {
        return Err(format!("runs cover {} bits, header says D={d}", bits.len()));
    }
    let mask = HardMask::from_bits(bits);
    if !(0.0..=1.0).contains(&sparsity) || surviving_count(d, sparsity) != mask.popcount() {
        return Err(format!(
            "popcount {} inconsistent with sparsity {sparsity} over D={d}",
            mask.popcount()
        ));
    }
    Ok(mask)
}

pub fn write_mask_file(path: &Path, mask: &HardMask) -> Result<()> {
    fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_mask_file(path: &Path) -> Result<HardMask> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_mask(&text).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        offset: 0,
        msg,
    })
}
