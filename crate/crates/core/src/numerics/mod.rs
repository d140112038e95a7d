//! Probability transforms shared by the loss functions.
//!
//! The public operations work on the [`ProbVec`] and [`LogitVec`] newtypes.
//! The loss kernels call the slice-level helpers directly to avoid allocating
//! per sample.

mod batch;
mod rng;

pub use batch::LogitBatch;
pub use rng::{Purpose, RngStream};

use rand_distr::{Beta, Distribution};

use crate::error::{invalid_input, invalid_param, Result};

/// Tolerance used when validating that probabilities sum to one.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// A finite vector of unnormalized class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVec(Vec<f64>);

impl LogitVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid_input("logits must be non-empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid_input(format!(
                "logit {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// A probability vector over `M` classes.
///
/// Entries lie in `[0, 1]` and sum to one within [`PROB_SUM_TOL`], except for
/// the output of [`clamp_probs`], which floors entries without renormalizing.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVec(Vec<f64>);

impl ProbVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid_input("probability vector must be non-empty"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid_input(format!("probability {v} outside [0, 1]")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(invalid_input(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        entropy(&self.0)
    }
}

/// Index of the maximum entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Writes `softmax(src * scale)` into `dst` using max subtraction.
pub(crate) fn softmax_scaled_into(src: &[f64], scale: f64, dst: &mut [f64]) {
    debug_assert_eq!(src.len(), dst.len());
    let max = src
        .iter()
        .map(|&v| v * scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s * scale - max).exp();
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
}

pub(crate) fn softmax_into(src: &[f64], dst: &mut [f64]) {
    softmax_scaled_into(src, 1.0, dst)
}

/// `ln Σ exp(src)`, stable.
pub(crate) fn log_sum_exp(src: &[f64]) -> f64 {
    let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + src.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Sharpening on a raw slice, computed in the log domain so small `T` does
/// not underflow every entry at once.
pub(crate) fn sharpen_into(p: &[f64], t: f64, dst: &mut [f64]) {
    let inv_t = 1.0 / t;
    let max = p
        .iter()
        .map(|&v| v.ln() * inv_t)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, &v) in dst.iter_mut().zip(p) {
        *d = if v > 0.0 {
            (v.ln() * inv_t - max).exp()
        } else {
            0.0
        };
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
}

pub fn softmax(logits: &LogitVec) -> ProbVec {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits.as_slice(), &mut out);
    ProbVec(out)
}

/// Softmax of `logits / t_d`. With `t_d = 1` this is exactly [`softmax`].
pub fn tempered_softmax(logits: &LogitVec, t_d: f64) -> Result<ProbVec> {
    if !(t_d > 0.0) || !t_d.is_finite() {
        return Err(invalid_param(format!(
            "distillation temperature must be positive, got {t_d}"
        )));
    }
    let scaled: Vec<f64> = logits.as_slice().iter().map(|v| v / t_d).collect();
    let mut out = vec![0.0; scaled.len()];
    softmax_into(&scaled, &mut out);
    Ok(ProbVec(out))
}

/// `p_i^(1/T) / Σ_j p_j^(1/T)`. Lowers entropy for `T < 1`.
pub fn sharpen(p: &ProbVec, t: f64) -> Result<ProbVec> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid_param(format!(
            "sharpening temperature must be positive, got {t}"
        )));
    }
    let mut out = vec![0.0; p.len()];
    sharpen_into(p.as_slice(), t, &mut out);
    Ok(ProbVec(out))
}

/// Draws the mixing weight `λ ~ Beta(1, 1)`.
pub fn sample_mix_weight(rng: &mut RngStream) -> f64 {
    // Beta(1, 1) parameters are always valid.
    Beta::new(1.0, 1.0).expect("Beta(1,1)").sample(rng)
}

/// Floors every entry at `lo` and caps at 1. The result is not renormalized.
pub fn clamp_probs(p: &ProbVec, lo: f64) -> ProbVec {
    ProbVec(p.as_slice().iter().map(|&v| v.clamp(lo, 1.0)).collect())
}
