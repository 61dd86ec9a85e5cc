//! Dense models whose connection weights are masked elementwise.
//!
//! A [`MaskedMlp`] holds the parent weights `θ`, one mask logit per weight
//! and (optionally) unmasked biases. Effective weights are `θ̃ = v ∘ θ`,
//! where `v` is either the relaxed mask `σ(t_l w)`, a hard 0/1 mask, or all
//! ones. A model with layer sizes `[d, 1]` and a logistic head is the
//! masked logistic regression `F(x) = σ(θ̃ᵀx + b)`.
//!
//! Weights of layer `l` are stored row-major as `fan_out × fan_in` starting
//! at `offset(l)` in the flat `θ` vector.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::baselines::LayerPartition;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::relaxation::{relax_values, HardMask, MaskLogits};

/// The probability of the true label is clamped below at `ε` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

pub const MAX_LAYERS: usize = 3;

const CHECKPOINT_MAGIC: &str = "archprune-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHead {
    /// Single sigmoid output, binary cross-entropy.
    Logistic,
    /// Class scores, softmax cross-entropy.
    Softmax,
}

/// Which mask multiplies `θ` in a forward pass.
#[derive(Debug, Clone, Copy)]
pub enum MaskMode<'a> {
    Relaxed { t_l: f64 },
    Hard(&'a HardMask),
    Dense,
}

/// Input rows (row-major) and labels for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    x: Vec<f64>,
    y: Vec<usize>,
    n_features: usize,
}

impl Batch {
    pub fn new(x: Vec<f64>, y: Vec<usize>, n_features: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        Error::check_len(y.len() * n_features, x.len())?;
        Ok(Self { x, y, n_features })
    }

    pub fn from_dataset(data: &Dataset, indices: &[usize]) -> Result<Self> {
        let mut x = Vec::with_capacity(indices.len() * data.n_features());
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(data.row(i));
            y.push(data.label(i));
        }
        Self::new(x, y, data.n_features())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }
}

/// Loss and its exact gradients at the current parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrads {
    pub loss: f64,
    /// `∂L/∂θ`, including the `2γθ` term.
    pub grad_theta: Vec<f64>,
    /// `∂L/∂b`; empty when the model has no biases.
    pub grad_bias: Vec<f64>,
    /// `∂L/∂v`, gradient with respect to the mask values.
    pub grad_v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMlp {
    sizes: Vec<usize>,
    head: OutputHead,
    theta: Vec<f64>,
    logits: MaskLogits,
    bias: Option<Vec<f64>>,
}

impl MaskedMlp {
    /// Zero-initialised model. `sizes = [inputs, hidden.., outputs]`.
    pub fn new(sizes: &[usize], head: OutputHead, with_bias: bool) -> Result<Self> {
        if sizes.len() < 2 || sizes.len() > MAX_LAYERS + 1 {
            return Err(Error::InvalidInput(format!(
                "need between 1 and {MAX_LAYERS} dense layers, got sizes {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("zero-width layer in {sizes:?}")));
        }
        let outputs = *sizes.last().unwrap();
        match head {
            OutputHead::Logistic if outputs != 1 => {
                return Err(Error::InvalidInput(
                    "logistic head needs exactly one output".into(),
                ))
            }
            OutputHead::Softmax if outputs < 2 => {
                return Err(Error::InvalidInput(
                    "softmax head needs at least two outputs".into(),
                ))
            }
            _ => {}
        }
        let d: usize = sizes.windows(2).map(|w| w[0] * w[1]).sum();
        let n_bias: usize = sizes[1..].iter().sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            head,
            theta: vec![0.0; d],
            logits: MaskLogits::zeros(d),
            bias: with_bias.then(|| vec![0.0; n_bias]),
        })
    }

    /// Masked logistic regression on `n_features` inputs.
    pub fn logistic(n_features: usize, with_bias: bool) -> Result<Self> {
        Self::new(&[n_features, 1], OutputHead::Logistic, with_bias)
    }

    /// ReLU MLP with a softmax head and biases.
    pub fn mlp(sizes: &[usize]) -> Result<Self> {
        Self::new(sizes, OutputHead::Softmax, true)
    }

    /// `θ ~ N(0, ε_θ²)`, `w ~ |N(0, ε_w²)|`, biases zero.
    pub fn init_random<R: Rng + ?Sized>(&mut self, rng: &mut R, eps_theta: f64, eps_w: f64) {
        self.init_theta(rng, eps_theta);
        let nw = Normal::new(0.0, eps_w).expect("eps_w must be finite");
        for w in self.logits.as_mut_slice() {
            *w = nw.sample(rng).abs();
        }
    }

    /// Redraws `θ ~ N(0, ε_θ²)` and zeroes the biases; logits are untouched.
    pub fn init_theta<R: Rng + ?Sized>(&mut self, rng: &mut R, eps_theta: f64) {
        let nt = Normal::new(0.0, eps_theta).expect("eps_theta must be finite");
        for t in &mut self.theta {
            *t = nt.sample(rng);
        }
        if let Some(b) = &mut self.bias {
            b.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Number of classes predicted by [`Self::predict`].
    pub fn n_classes(&self) -> usize {
        match self.head {
            OutputHead::Logistic => 2,
            OutputHead::Softmax => self.n_outputs(),
        }
    }

    /// Total number of maskable weights `D`.
    pub fn num_weights(&self) -> usize {
        self.theta.len()
    }

    pub fn partition(&self) -> LayerPartition {
        LayerPartition::new(self.sizes.windows(2).map(|w| w[0] * w[1]).collect())
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn logits(&self) -> &MaskLogits {
        &self.logits
    }

    pub(crate) fn logits_mut(&mut self) -> &mut MaskLogits {
        &mut self.logits
    }

    pub fn set_logits(&mut self, logits: MaskLogits) -> Result<()> {
        Error::check_len(self.theta.len(), logits.len())?;
        self.logits = logits;
        Ok(())
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut [f64]> {
        self.bias.as_deref_mut()
    }

    /// Mask values `v` for the given mode.
    pub fn mask_values(&self, mode: MaskMode<'_>) -> Result<Vec<f64>> {
        match mode {
            MaskMode::Relaxed { t_l } => {
                if !(t_l > 0.0 && t_l.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "temperature must be positive, got {t_l}"
                    )));
                }
                Ok(relax_values(self.logits.as_slice(), t_l))
            }
            MaskMode::Hard(m) => {
                Error::check_len(self.theta.len(), m.len())?;
                Ok(m.to_f64())
            }
            MaskMode::Dense => Ok(vec![1.0; self.theta.len()]),
        }
    }

    /// Effective weights `θ̃ = v ∘ θ`.
    pub fn effective_weights(&self, mode: MaskMode<'_>) -> Result<Vec<f64>> {
        let v = self.mask_values(mode)?;
        Ok(v.iter().zip(&self.theta).map(|(a, b)| a * b).collect())
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.sizes.len());
        let mut o = 0;
        offs.push(0);
        for w in self.sizes.windows(2) {
            o += w[0] * w[1];
            offs.push(o);
        }
        offs
    }

    fn bias_offsets(&self) -> Vec<usize> {
        let mut offs = vec![0];
        let mut o = 0;
        for &s in &self.sizes[1..] {
            o += s;
            offs.push(o);
        }
        offs
    }

    /// Forward pass for one example; `acts[0]` is the input, `acts[l]` the
    /// post-ReLU activations of hidden layer `l`, and the last entry holds the
    /// pre-activation outputs.
    fn forward_one(&self, wt: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>) {
        let n_layers = self.sizes.len() - 1;
        let woff = self.layer_offsets();
        let boff = self.bias_offsets();
        acts.resize(self.sizes.len(), Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(x);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &wt[woff[l]..woff[l + 1]];
            let mut out = vec![0.0; fan_out];
            for (o, z) in out.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut s: f64 = row.iter().zip(&acts[l]).map(|(a, b)| a * b).sum();
                if let Some(b) = &self.bias {
                    s += b[boff[l] + o];
                }
                *z = if l + 1 < n_layers { s.max(0.0) } else { s };
            }
            acts[l + 1] = out;
        }
    }

    fn check_inputs(&self, x: &[f64]) -> Result<usize> {
        let d = self.n_inputs();
        if !x.len().is_multiple_of(d) {
            return Err(Error::Dimension {
                expected: d,
                got: x.len(),
            });
        }
        Ok(x.len() / d)
    }

    /// Model outputs for row-major inputs. A logistic model returns one
    /// probability per row; a softmax model returns `n × classes` scores.
    pub fn forward(&self, x: &[f64], mode: MaskMode<'_>) -> Result<Vec<f64>> {
        let n = self.check_inputs(x)?;
        let wt = self.effective_weights(mode)?;
        let d = self.n_inputs();
        let mut acts = Vec::new();
        let mut out = Vec::with_capacity(n * self.n_outputs());
        for r in 0..n {
            self.forward_one(&wt, &x[r * d..(r + 1) * d], &mut acts);
            let z = acts.last().unwrap();
            match self.head {
                OutputHead::Logistic => out.push(crate::relaxation::sigmoid(z[0])),
                OutputHead::Softmax => out.extend_from_slice(z),
            }
        }
        Ok(out)
    }

    /// Predicted class per row. Logistic: `1` iff `F > 1/2`; softmax: first
    /// arg max.
    pub fn predict(&self, x: &[f64], mode: MaskMode<'_>) -> Result<Vec<usize>> {
        let out = self.forward(x, mode)?;
        Ok(match self.head {
            OutputHead::Logistic => out.iter().map(|&p| usize::from(p > 0.5)).collect(),
            OutputHead::Softmax => out.chunks(self.n_outputs()).map(argmax).collect(),
        })
    }

    /// Fraction of rows of `data` whose predicted class equals the label.
    pub fn accuracy(&self, data: &Dataset, mode: MaskMode<'_>) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidInput("accuracy on empty data set".into()));
        }
        Error::check_len(self.n_inputs(), data.n_features())?;
        let pred = self.predict(data.features(), mode)?;
        let correct = pred.iter().zip(data.labels()).filter(|(p, y)| p == y).count();
        Ok(correct as f64 / data.len() as f64)
    }

    /// Mean loss of `data` plus `γ‖θ‖²`, evaluated in chunks.
    pub fn dataset_loss(&self, data: &Dataset, mode: MaskMode<'_>, gamma: f64) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::InvalidInput("loss on empty data set".into()));
        }
        Error::check_len(self.n_inputs(), data.n_features())?;
        let wt = self.effective_weights(mode)?;
        let mut acts = Vec::new();
        let mut total = 0.0;
        for i in 0..data.len() {
            self.forward_one(&wt, data.row(i), &mut acts);
            total += self.example_loss(acts.last().unwrap(), data.label(i));
        }
        Ok(total / data.len() as f64 + gamma * self.theta.iter().map(|t| t * t).sum::<f64>())
    }

    fn example_loss(&self, z: &[f64], y: usize) -> f64 {
        match self.head {
            OutputHead::Logistic => {
                let signed = if y == 1 { z[0] } else { -z[0] };
                -crate::relaxation::sigmoid(signed).max(PROB_EPS).ln()
            }
            OutputHead::Softmax => {
                let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                lse - z[y]
            }
        }
    }

    /// Mean loss over the batch plus `γ‖θ‖²`, with exact gradients with
    /// respect to `θ`, the biases and the mask values `v`.
    pub fn loss_and_grads(&self, batch: &Batch, mode: MaskMode<'_>, gamma: f64) -> Result<LossGrads> {
        Error::check_len(self.n_inputs(), batch.n_features)?;
        if let Some(&bad) = batch.y.iter().find(|&&y| y >= self.n_classes()) {
            return Err(Error::InvalidInput(format!(
                "label {bad} out of range for {} classes",
                self.n_classes()
            )));
        }
        let v = self.mask_values(mode)?;
        let wt: Vec<f64> = v.iter().zip(&self.theta).map(|(a, b)| a * b).collect();
        let woff = self.layer_offsets();
        let boff = self.bias_offsets();
        let n_layers = self.sizes.len() - 1;

        let mut g_wt = vec![0.0; wt.len()];
        let mut g_b = vec![0.0; *boff.last().unwrap()];
        let mut loss = 0.0;
        let mut acts = Vec::new();
        for r in 0..batch.len() {
            let y = batch.y[r];
            self.forward_one(&wt, batch.row(r), &mut acts);
            let z = acts.last().unwrap();
            loss += self.example_loss(z, y);
            let mut delta: Vec<f64> = match self.head {
                OutputHead::Logistic => {
                    vec![crate::relaxation::sigmoid(z[0]) - y as f64]
                }
                OutputHead::Softmax => {
                    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                    let s: f64 = e.iter().sum();
                    e.iter()
                        .enumerate()
                        .map(|(k, ek)| ek / s - if k == y { 1.0 } else { 0.0 })
                        .collect()
                }
            };
            for l in (0..n_layers).rev() {
                let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
                let a_prev = &acts[l];
                let gw = &mut g_wt[woff[l]..woff[l + 1]];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (g, &a) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(a_prev) {
                        *g += d * a;
                    }
                    g_b[boff[l] + o] += d;
                }
                if l > 0 {
                    let w = &wt[woff[l]..woff[l + 1]];
                    let mut prev = vec![0.0; fan_in];
                    for (o, &d) in delta.iter().enumerate().take(fan_out) {
                        if d == 0.0 {
                            continue;
                        }
                        for (p, &wv) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                            *p += wv * d;
                        }
                    }
                    for (p, &a) in prev.iter_mut().zip(a_prev) {
                        if a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let inv_n = 1.0 / batch.len() as f64;
        loss = loss * inv_n + gamma * self.theta.iter().map(|t| t * t).sum::<f64>();
        let grad_theta = g_wt
            .iter()
            .zip(&v)
            .zip(&self.theta)
            .map(|((g, vi), t)| g * inv_n * vi + 2.0 * gamma * t)
            .collect();
        let grad_v = g_wt
            .iter()
            .zip(&self.theta)
            .map(|(g, t)| g * inv_n * t)
            .collect();
        let grad_bias = if self.bias.is_some() {
            g_b.iter().map(|g| g * inv_n).collect()
        } else {
            Vec::new()
        };
        Ok(LossGrads {
            loss,
            grad_theta,
            grad_bias,
            grad_v,
        })
    }

    /// Writes the model as a versioned text checkpoint.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            msg,
        })
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        writeln!(s, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}").unwrap();
        let head = match self.head {
            OutputHead::Logistic => "logistic",
            OutputHead::Softmax => "softmax",
        };
        writeln!(s, "head {head}").unwrap();
        let sizes: Vec<String> = self.sizes.iter().map(|x| x.to_string()).collect();
        writeln!(s, "layers {}", sizes.join(" ")).unwrap();
        writeln!(s, "theta {}", join(&self.theta)).unwrap();
        writeln!(s, "logits {}", join(self.logits.as_slice())).unwrap();
        match &self.bias {
            Some(b) => writeln!(s, "bias {}", join(b)).unwrap(),
            None => writeln!(s, "bias none").unwrap(),
        }
        s
    }

    pub fn from_checkpoint_str(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let mut field = |name: &str| -> std::result::Result<Vec<&str>, String> {
            let line = lines.next().ok_or_else(|| format!("missing `{name}` line"))?;
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some(tag) if tag == name => Ok(parts.collect()),
                other => Err(format!("expected `{name}`, found {other:?}")),
            }
        };
        let version = field(CHECKPOINT_MAGIC)?;
        if version != [CHECKPOINT_VERSION.to_string().as_str()] {
            return Err(format!("unsupported checkpoint version {version:?}"));
        }
        let head = match field("head")?.as_slice() {
            ["logistic"] => OutputHead::Logistic,
            ["softmax"] => OutputHead::Softmax,
            other => return Err(format!("unknown head {other:?}")),
        };
        let sizes = field("layers")?
            .iter()
            .map(|t| t.parse::<usize>().map_err(|e| e.to_string()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let floats = |toks: Vec<&str>| {
            toks.iter()
                .map(|t| t.parse::<f64>().map_err(|e| e.to_string()))
                .collect::<std::result::Result<Vec<_>, _>>()
        };
        let theta = floats(field("theta")?)?;
        let logits = floats(field("logits")?)?;
        let bias_toks = field("bias")?;
        let with_bias = bias_toks != ["none"];
        let mut model = Self::new(&sizes, head, with_bias).map_err(|e| e.to_string())?;
        if theta.len() != model.theta.len() || logits.len() != model.theta.len() {
            return Err(format!(
                "expected {} weights, got theta={} logits={}",
                model.theta.len(),
                theta.len(),
                logits.len()
            ));
        }
        model.theta = theta;
        model.logits = MaskLogits::new(logits).map_err(|e| e.to_string())?;
        if with_bias {
            let b = floats(bias_toks)?;
            if Some(b.len()) != model.bias.as_ref().map(Vec::len) {
                return Err("bias length mismatch".into());
            }
            model.bias = Some(b);
        }
        Ok(model)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relaxation::harden_mask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> Batch {
        let x = (0..n * d).map(|_| rng.random::<f64>()).collect();
        let y = (0..n).map(|_| rng.random_range(0..classes)).collect();
        Batch::new(x, y, d).unwrap()
    }

    fn with_logits(mut m: MaskedMlp, w: Vec<f64>) -> MaskedMlp {
        m.set_logits(MaskLogits::new(w).unwrap()).unwrap();
        m
    }

    #[test]
    fn zero_effective_weights_give_half() {
        let m = MaskedMlp::logistic(3, false).unwrap();
        let out = m.forward(&[0.3, -2.0, 7.0, 1.0, 1.0, 1.0], MaskMode::Dense).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
    }

    #[test]
    fn saturated_negative_mask_zeroes_weights() {
        let mut m = MaskedMlp::logistic(2, false).unwrap();
        m.theta_mut().copy_from_slice(&[1.0, 1.0]);
        let m = with_logits(m, vec![-5.0, -5.0]);
        let out = m.forward(&[3.0, 7.0], MaskMode::Relaxed { t_l: 1000.0 }).unwrap();
        assert_eq!(out, vec![0.5]);
    }

    #[test]
    fn zero_hard_mask_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = MaskedMlp::logistic(5, false).unwrap();
        m.init_random(&mut rng, 1.0, 1.0);
        let zero = HardMask::zeros(5);
        let x: Vec<f64> = (0..50).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        assert!(m.forward(&x, MaskMode::Hard(&zero)).unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let m = MaskedMlp::mlp(&[4, 3, 2]).unwrap();
        assert!(matches!(
            m.forward(&[1.0; 5], MaskMode::Dense),
            Err(Error::Dimension { .. })
        ));
        assert!(m.forward(&[1.0; 4], MaskMode::Hard(&HardMask::ones(3))).is_err());
        assert!(MaskedMlp::new(&[4], OutputHead::Softmax, true).is_err());
        assert!(MaskedMlp::new(&[4, 2, 2, 2, 2], OutputHead::Softmax, true).is_err());
        assert!(MaskedMlp::new(&[4, 2], OutputHead::Logistic, true).is_err());
    }

    #[test]
    fn mlp_forward_matches_manual_matmul() {
        // 2 -> 2 -> 2 with identity-like first layer; values checked by hand
        let mut m = MaskedMlp::mlp(&[2, 2, 2]).unwrap();
        m.theta_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0, 2.0, -1.0, 0.5, 3.0]);
        m.bias_mut().unwrap().copy_from_slice(&[0.0, -1.0, 0.1, 0.2]);
        // h = relu([0.5, 2 - 1]) = [0.5, 1.0]
        // z = [2*0.5 - 1*1 + 0.1, 0.5*0.5 + 3*1 + 0.2] = [0.1, 3.45]
        let out = m.forward(&[0.5, 2.0], MaskMode::Dense).unwrap();
        assert!((out[0] - 0.1).abs() < 1e-12 && (out[1] - 3.45).abs() < 1e-12);
        // negative pre-activation is clipped
        let out = m.forward(&[-1.0, 0.5], MaskMode::Dense).unwrap();
        // h = relu([-1, -0.5]) = 0 -> z = bias
        assert_eq!(out, vec![0.1, 0.2]);
    }

    #[test]
    fn loss_at_half_is_ln2() {
        let m = MaskedMlp::logistic(3, false).unwrap();
        let b = Batch::new(vec![1.0, 2.0, 3.0], vec![1], 3).unwrap();
        let lg = m.loss_and_grads(&b, MaskMode::Dense, 0.0).unwrap();
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn grad_v_is_grad_effective_times_theta() {
        // one example, F = σ(θ̃·x); ∂L/∂θ̃ = (F − y)·x. With θ̃ = 0, F = 1/2,
        // y = 0, x = [2, 4]: ∂L/∂θ̃ = [1, 2]. θ = [3, −1] and v = 0 (hard zero mask).
        let mut m = MaskedMlp::logistic(2, false).unwrap();
        m.theta_mut().copy_from_slice(&[3.0, -1.0]);
        let b = Batch::new(vec![2.0, 4.0], vec![0], 2).unwrap();
        let zero = HardMask::zeros(2);
        let lg = m.loss_and_grads(&b, MaskMode::Hard(&zero), 0.0).unwrap();
        assert_eq!(lg.grad_v, vec![3.0, -2.0]);
        assert_eq!(lg.grad_theta, vec![0.0, 0.0]);
    }

    #[test]
    fn probability_clamp_keeps_loss_finite() {
        let mut m = MaskedMlp::logistic(1, false).unwrap();
        m.theta_mut()[0] = 1e4;
        let b = Batch::new(vec![1.0], vec![0], 1).unwrap();
        let lg = m.loss_and_grads(&b, MaskMode::Dense, 0.0).unwrap();
        assert!((lg.loss - -(PROB_EPS.ln())).abs() < 1e-6);
    }

    /// Central differences of the loss in θ, b and v (v entered through a
    /// relaxed mask at t = 1 so that v = σ(w) can be perturbed via θ̃).
    fn check_gradients(model: &MaskedMlp, batch: &Batch, gamma: f64, t_l: f64) {
        let h = 1e-5;
        let mode = MaskMode::Relaxed { t_l };
        let lg = model.loss_and_grads(batch, mode, gamma).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);

        for i in 0..model.num_weights() {
            let mut p = model.clone();
            p.theta_mut()[i] += h;
            let lp = p.loss_and_grads(batch, mode, gamma).unwrap().loss;
            p.theta_mut()[i] -= 2.0 * h;
            let lm = p.loss_and_grads(batch, mode, gamma).unwrap().loss;
            let fd = (lp - lm) / (2.0 * h);
            assert!(rel(fd, lg.grad_theta[i]) < 1e-4, "theta[{i}] fd={fd} an={}", lg.grad_theta[i]);
        }
        if model.bias().is_some() {
            for i in 0..lg.grad_bias.len() {
                let mut p = model.clone();
                p.bias_mut().unwrap()[i] += h;
                let lp = p.loss_and_grads(batch, mode, gamma).unwrap().loss;
                p.bias_mut().unwrap()[i] -= 2.0 * h;
                let lm = p.loss_and_grads(batch, mode, gamma).unwrap().loss;
                let fd = (lp - lm) / (2.0 * h);
                assert!(rel(fd, lg.grad_bias[i]) < 1e-4, "bias[{i}]");
            }
        }
        // perturb v_i directly: loss as a function of v with θ held fixed
        let v = model.mask_values(mode).unwrap();
        let loss_at_v = |vv: &[f64]| {
            let mut p = model.clone();
            let wt: Vec<f64> = vv.iter().zip(model.theta()).map(|(a, b)| a * b).collect();
            p.theta_mut().copy_from_slice(&wt);
            // θ penalty must still be γ‖θ‖² of the original θ
            let pen = gamma * model.theta().iter().map(|t| t * t).sum::<f64>();
            p.loss_and_grads(batch, MaskMode::Dense, 0.0).unwrap().loss + pen
        };
        for i in 0..v.len() {
            let mut vp = v.clone();
            vp[i] += h;
            let mut vm = v.clone();
            vm[i] -= h;
            let fd = (loss_at_v(&vp) - loss_at_v(&vm)) / (2.0 * h);
            assert!(rel(fd, lg.grad_v[i]) < 1e-4, "v[{i}] fd={fd} an={}", lg.grad_v[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..50 {
            let (mut model, batch) = if case % 2 == 0 {
                let mut m = MaskedMlp::logistic(10, case % 4 == 0).unwrap();
                m.init_random(&mut rng, 0.5, 0.5);
                (m, random_batch(&mut rng, 8, 10, 2))
            } else {
                let mut m = MaskedMlp::mlp(&[5, 4, 3]).unwrap();
                m.init_random(&mut rng, 0.7, 0.5);
                (m, random_batch(&mut rng, 6, 5, 3))
            };
            // signed logits so that v is spread over (0, 1)
            let w: Vec<f64> = (0..model.num_weights()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            model.set_logits(MaskLogits::new(w).unwrap()).unwrap();
            if let Some(b) = model.bias_mut() {
                b.iter_mut().for_each(|x| *x = rng.random::<f64>() - 0.5);
            }
            check_gradients(&model, &batch, 0.01 * (case % 3) as f64, 3.0);
        }
    }

    #[test]
    fn hard_mode_matches_high_temperature_relaxation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = MaskedMlp::mlp(&[6, 5, 3]).unwrap();
        m.init_random(&mut rng, 0.5, 1.0);
        let w: Vec<f64> = (0..m.num_weights())
            .map(|_| {
                let x: f64 = rng.random::<f64>() * 2.0 - 1.0;
                if x.abs() < 1e-3 { 0.5 } else { x }
            })
            .collect();
        let m = with_logits(m, w);
        let hard = harden_mask(m.logits());
        let x: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let a = m.forward(&x, MaskMode::Hard(&hard)).unwrap();
        let b = m.forward(&x, MaskMode::Relaxed { t_l: 1e6 }).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for mut m in [
            MaskedMlp::mlp(&[3, 4, 2]).unwrap(),
            MaskedMlp::logistic(5, false).unwrap(),
        ] {
            m.init_random(&mut rng, 0.3, 0.2);
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.ckpt");
            m.save_checkpoint(&p).unwrap();
            assert_eq!(MaskedMlp::load_checkpoint(&p).unwrap(), m);
        }
        assert!(MaskedMlp::from_checkpoint_str("archprune-checkpoint 2\n").is_err());
        assert!(MaskedMlp::from_checkpoint_str("garbage").is_err());
    }

    #[test]
    fn partition_sums_to_d() {
        let m = MaskedMlp::mlp(&[784, 64, 5]).unwrap();
        assert_eq!(m.partition().sizes(), &[784 * 64, 64 * 5]);
        assert_eq!(m.partition().total(), m.num_weights());
    }
}
