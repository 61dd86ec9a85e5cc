//! Sigmoid relaxation of binary masks.
//!
//! A mask over `D` connections is parameterised by real logits `w`. The
//! low-temperature relaxation `v = σ(t_l·w)` stands in for the binary mask in
//! the forward pass, while the mask gradient is taken through the derivative
//! of a second, high-temperature sigmoid `σ(t_s·w)`. Hardening the logits
//! (`t_l → ∞`) gives the final binary mask `1[w > 0]`.
//!
//! Everything here is a pure function of its arguments.

use crate::error::{Error, Result};

/// Beyond this magnitude the sigmoid is clamped to exactly 0 or 1.
pub const SATURATION: f64 = 30.0;

/// Logistic sigmoid, clamped to `{0, 1}` for `|x| > 30`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x > SATURATION {
        1.0
    } else if x < -SATURATION {
        0.0
    } else if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `t · σ(t x)(1 − σ(t x))`, the derivative of `x ↦ σ(t x)`.
#[inline]
pub fn scaled_sigmoid_slope(x: f64, t: f64) -> f64 {
    let s = sigmoid(t * x);
    t * s * (1.0 - s)
}

/// Real-valued mask logits `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskLogits(Vec<f64>);

impl MaskLogits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "mask logit")?;
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Mutable access for optimizers. Callers must keep entries finite.
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, w| m.max(w.abs()))
    }

    /// Number of strictly positive logits, i.e. the popcount of the hard mask.
    pub fn positive_count(&self) -> usize {
        self.0.iter().filter(|&&w| w > 0.0).count()
    }
}

/// `v = σ(t·w)` together with the temperature that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedMask {
    values: Vec<f64>,
    temperature: f64,
}

impl RelaxedMask {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Binary mask over connections.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HardMask(Vec<bool>);

impl HardMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![true; len])
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![false; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    /// Number of surviving connections, `|m|`.
    pub fn popcount(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Fraction of pruned connections.
    pub fn sparsity(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        1.0 - self.popcount() as f64 / self.0.len() as f64
    }

    /// Mask as 0/1 reals.
    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    /// `true` when every surviving entry of `self` also survives in `other`.
    pub fn is_subset_of(&self, other: &HardMask) -> bool {
        self.len() == other.len() && self.0.iter().zip(&other.0).all(|(&a, &b)| !a || b)
    }
}

/// Low/high inverse temperatures with `t_l ≥ t_s > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempPair {
    t_l: f64,
    t_s: f64,
}

impl TempPair {
    pub fn new(t_l: f64, t_s: f64) -> Result<Self> {
        if !(t_s > 0.0 && t_s.is_finite() && t_l.is_finite() && t_l >= t_s) {
            return Err(Error::InvalidInput(format!(
                "temperatures must satisfy t_l >= t_s > 0, got t_l={t_l}, t_s={t_s}"
            )));
        }
        Ok(Self { t_l, t_s })
    }

    pub fn low(&self) -> f64 {
        self.t_l
    }

    pub fn high(&self) -> f64 {
        self.t_s
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::InvalidInput(format!(
            "{what} {i} is not finite ({})",
            values[i]
        ))),
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "temperature must be positive, got {t}"
        )))
    }
}

/// `v_i = σ(t·w_i)`.
pub fn relax_mask(w: &MaskLogits, t: f64) -> Result<RelaxedMask> {
    check_temperature(t)?;
    Ok(RelaxedMask {
        values: relax_values(w.as_slice(), t),
        temperature: t,
    })
}

pub(crate) fn relax_values(w: &[f64], t: f64) -> Vec<f64> {
    w.iter().map(|&wi| sigmoid(t * wi)).collect()
}

/// `m_i = 1[w_i > 0]`. Zero logits are pruned.
pub fn harden_mask(w: &MaskLogits) -> HardMask {
    HardMask(w.as_slice().iter().map(|&wi| wi > 0.0).collect())
}

/// Two-temperature mask gradient: `grad_v ∘ t_s σ(t_s w)(1 − σ(t_s w))`.
///
/// `grad_v` is the gradient of the loss with respect to the low-temperature
/// relaxed mask. With `t_s = t_l` this is the exact chain-rule gradient
/// with respect to `w`.
pub fn two_temp_grad(grad_v: &[f64], w: &MaskLogits, t_s: f64) -> Result<Vec<f64>> {
    Error::check_len(w.len(), grad_v.len())?;
    check_temperature(t_s)?;
    Ok(grad_v
        .iter()
        .zip(w.as_slice())
        .map(|(&g, &wi)| g * scaled_sigmoid_slope(wi, t_s))
        .collect())
}

/// `g_max(t) = σ(t M)(1 − σ(t M))`.
pub fn g_max(t: f64, max_abs_w: f64) -> f64 {
    let s = sigmoid(t * max_abs_w);
    s * (1.0 - s)
}

/// Error constant of the convergence bound,
/// `C = t_l t_s (1/(t_l t_s) − 2 g_max(t_l) g_max(t_s) + t_l t_s / 16²)`.
pub fn bound_constant_c(t_l: f64, t_s: f64, max_abs_w: f64) -> f64 {
    let p = t_l * t_s;
    p * (1.0 / p - 2.0 * g_max(t_l, max_abs_w) * g_max(t_s, max_abs_w) + p / 256.0)
}

/// `1/(c√T) + c G² (1 + C)(1 + ln T) / T`.
pub fn convergence_bound(iterations: usize, c: f64, grad_bound: f64, error_const: f64) -> f64 {
    let t = iterations as f64;
    1.0 / (c * t.sqrt()) + c * grad_bound * grad_bound * (1.0 + error_const) * (1.0 + t.ln()) / t
}

/// Constants entering the convergence bound for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    /// `G`, bound on `‖∇_v ℓ‖`.
    pub grad_bound: f64,
    /// `M`, largest `|w_i|` seen along the trajectory.
    pub max_abs_w: f64,
    pub iterations: usize,
    /// `c` in `α_i = c/√i`.
    pub step_constant: f64,
    pub temps: TempPair,
}

impl BoundParams {
    pub fn g_max_low(&self) -> f64 {
        g_max(self.temps.low(), self.max_abs_w)
    }

    pub fn g_max_high(&self) -> f64 {
        g_max(self.temps.high(), self.max_abs_w)
    }

    pub fn error_constant(&self) -> f64 {
        bound_constant_c(self.temps.low(), self.temps.high(), self.max_abs_w)
    }

    /// Bound value; `NaN` for `iterations == 0`.
    pub fn value(&self) -> f64 {
        if self.iterations == 0 {
            return f64::NAN;
        }
        convergence_bound(
            self.iterations,
            self.step_constant,
            self.grad_bound,
            self.error_constant(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn logits(v: &[f64]) -> MaskLogits {
        MaskLogits::new(v.to_vec()).unwrap()
    }

    #[test]
    fn relax_examples() {
        assert_eq!(relax_mask(&logits(&[0.0]), 1000.0).unwrap().values(), &[0.5]);
        let v = relax_mask(&logits(&[3f64.ln()]), 1.0).unwrap();
        assert!((v.values()[0] - 0.75).abs() < 1e-15);
        assert_eq!(relax_mask(&logits(&[0.1]), 1000.0).unwrap().values(), &[1.0]);
        assert_eq!(relax_mask(&logits(&[-0.1]), 1000.0).unwrap().values(), &[0.0]);
    }

    #[test]
    fn relax_rejects_bad_input() {
        assert!(MaskLogits::new(vec![f64::NAN]).is_err());
        assert!(MaskLogits::new(vec![f64::INFINITY]).is_err());
        assert!(relax_mask(&logits(&[1.0]), 0.0).is_err());
        assert!(relax_mask(&logits(&[1.0]), -2.0).is_err());
    }

    #[test]
    fn harden_examples() {
        assert_eq!(
            harden_mask(&logits(&[0.3, -0.2, 0.0])).bits(),
            &[true, false, false]
        );
        assert_eq!(harden_mask(&logits(&[-1.0, -1.0])).popcount(), 0);
        assert_eq!(harden_mask(&logits(&[1e-12])).bits(), &[true]);
    }

    #[test]
    fn two_temp_grad_examples() {
        assert_eq!(two_temp_grad(&[1.0], &logits(&[0.0]), 4.0).unwrap(), vec![1.0]);
        assert_eq!(two_temp_grad(&[2.0], &logits(&[0.0]), 100.0).unwrap(), vec![50.0]);
        let g = two_temp_grad(&[1.0], &logits(&[5.0]), 1000.0).unwrap();
        assert!(g[0].abs() < 1e-12);
        assert!(matches!(
            two_temp_grad(&[1.0, 2.0], &logits(&[0.0]), 1.0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn bound_constant_examples() {
        assert!(bound_constant_c(4.0, 4.0, 0.0).abs() < 1e-15);
        assert!((bound_constant_c(1.0, 1.0, 0.0) - (15.0f64 / 16.0).powi(2)).abs() < 1e-15);
        assert!((bound_constant_c(1.0, 1.0, 0.0) - 0.87890625).abs() < 1e-15);
        for t in [0.1, 1.0, 37.0, 1000.0] {
            assert_eq!(g_max(t, 0.0), 0.25);
        }
    }

    #[test]
    fn convergence_bound_examples() {
        assert_eq!(convergence_bound(1, 1.0, 1.0, 0.0), 2.0);
        assert_eq!(convergence_bound(1, 1.0, 0.0, 123.0), 1.0);
        let expected = 0.1 + (1.0 + 100f64.ln()) / 100.0;
        assert!((convergence_bound(100, 1.0, 1.0, 0.0) - expected).abs() < 1e-15);
        assert!((convergence_bound(100, 1.0, 1.0, 0.0) - 0.156_051_701_859_880_9).abs() < 1e-12);
    }

    #[test]
    fn convergence_bound_decreases_in_t() {
        for (c, g, cc) in [(1.0, 1.0, 0.0), (0.5, 2.0, 3.0), (2.0, 0.3, 0.87)] {
            let mut prev = convergence_bound(3, c, g, cc);
            for t in 4..=100_000 {
                let b = convergence_bound(t, c, g, cc);
                assert!(b < prev, "not decreasing at T={t} for c={c} G={g} C={cc}");
                prev = b;
            }
        }
    }

    #[test]
    fn bound_constant_nonnegative_at_equal_temperatures() {
        for mi in 0..=50 {
            let m = mi as f64 * 0.1;
            let mut t = 0.1;
            while t <= 100.0 {
                let c = bound_constant_c(t, t, m);
                assert!(c >= 0.0, "C={c} at t={t}, M={m}");
                t *= 1.1;
            }
        }
    }

    #[test]
    fn bound_params_value_matches_formula() {
        let p = BoundParams {
            grad_bound: 1.3,
            max_abs_w: 0.7,
            iterations: 1000,
            step_constant: 0.5,
            temps: TempPair::new(4.0, 2.0).unwrap(),
        };
        let c = bound_constant_c(4.0, 2.0, 0.7);
        assert_eq!(p.value(), convergence_bound(1000, 0.5, 1.3, c));
    }

    #[test]
    fn temp_pair_ordering() {
        assert!(TempPair::new(100.0, 10.0).is_ok());
        assert!(TempPair::new(10.0, 10.0).is_ok());
        assert!(TempPair::new(1.0, 10.0).is_err());
        assert!(TempPair::new(1.0, 0.0).is_err());
    }

    /// Exact gradient of `w ↦ L(σ(t w))` against central differences,
    /// with `L(v) = log(1 + exp(a·v + b))` as the smooth outer loss.
    #[test]
    fn two_temp_grad_matches_finite_differences_at_equal_temperature() {
        let a = [0.7, -1.3, 2.1, 0.4];
        let b = -0.2;
        let loss = |w: &[f64], t: f64| {
            let z: f64 = w.iter().zip(&a).map(|(wi, ai)| ai * sigmoid(t * wi)).sum::<f64>() + b;
            (1.0 + z.exp()).ln()
        };
        let t = 7.0;
        let w = [0.1, -0.25, 0.03, 1.2];
        let z: f64 = w.iter().zip(&a).map(|(wi, ai)| ai * sigmoid(t * wi)).sum::<f64>() + b;
        let dz = 1.0 / (1.0 + (-z).exp());
        let grad_v: Vec<f64> = a.iter().map(|ai| ai * dz).collect();
        let g = two_temp_grad(&grad_v, &logits(&w), t).unwrap();
        let h = 1e-6;
        for i in 0..w.len() {
            let mut wp = w;
            let mut wm = w;
            wp[i] += h;
            wm[i] -= h;
            let fd = (loss(&wp, t) - loss(&wm, t)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-6, "i={i} fd={fd} analytic={}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn relaxed_values_in_unit_interval(
            w in prop::collection::vec(-1e3f64..1e3, 1..64),
            t in 1e-3f64..1e4,
        ) {
            let v = relax_mask(&MaskLogits::new(w.clone()).unwrap(), t).unwrap();
            for (&vi, &wi) in v.values().iter().zip(&w) {
                prop_assert!((0.0..=1.0).contains(&vi));
                if wi > 0.0 { prop_assert!(vi >= 0.5); }
                if wi < 0.0 { prop_assert!(vi <= 0.5); }
            }
        }

        #[test]
        fn relaxed_sign_matches_logit_sign(w in prop::collection::vec(-10f64..10.0, 1..32)) {
            // strict sign agreement wherever t·w is representable away from 0
            let v = relax_mask(&MaskLogits::new(w.clone()).unwrap(), 2.0).unwrap();
            for (&vi, &wi) in v.values().iter().zip(&w) {
                if wi.abs() > 1e-9 {
                    prop_assert_eq!((vi - 0.5).signum(), wi.signum());
                }
            }
        }

        #[test]
        fn harden_is_high_temperature_limit(w in prop::collection::vec(-5f64..5.0, 1..64)) {
            let w: Vec<f64> = w.into_iter().filter(|x| x.abs() > 1e-3).collect();
            let logits = MaskLogits::new(w).unwrap();
            let v = relax_mask(&logits, 1e6).unwrap();
            let hard = harden_mask(&logits);
            for (&vi, &mi) in v.values().iter().zip(hard.bits()) {
                prop_assert_eq!(vi > 0.5, mi);
            }
        }

        #[test]
        fn bound_constant_symmetric(t1 in 0.01f64..500.0, t2 in 0.01f64..500.0, m in 0f64..5.0) {
            let a = bound_constant_c(t1, t2, m);
            let b = bound_constant_c(t2, t1, m);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
