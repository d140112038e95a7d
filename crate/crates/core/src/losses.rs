//! Loss terms and their exact gradients with respect to the logit heads.
//!
//! Every loss takes batched logits (`rows × M`) and returns a [`LossOutput`]:
//! the batch-mean scalar and one adjoint per head. Head 1 holds the logits of
//! the original samples, head 2 those of the augmented view. Losses that use
//! a single head return an all-zero second adjoint.
//!
//! Logarithms are natural throughout.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Result};
use crate::numerics::{
    log_sum_exp, sharpen_into, softmax_into, LogitBatch, ProbVec,
};

/// Discrepancy measure used by the self-distillation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillKind {
    Js,
    L1,
    L2,
    Cosine,
    None,
}

impl std::str::FromStr for DistillKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "js" => Ok(Self::Js),
            "l1" => Ok(Self::L1),
            "l2" => Ok(Self::L2),
            "cosine" => Ok(Self::Cosine),
            "none" => Ok(Self::None),
            other => Err(format!("unknown distillation kind {other:?}")),
        }
    }
}

/// Hyperparameters of the local self-regularization losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LsrHyperParams {
    /// Sharpening temperature `T`.
    pub temperature: f64,
    /// Distillation temperature `T_d`.
    pub distill_temperature: f64,
    /// Target weight `γ` of the self-distillation term (before warm-up).
    pub gamma: f64,
    /// Entropy-regularization weight `λ_e` (LSR+ only).
    pub entropy_weight: f64,
    pub distill: DistillKind,
    /// Probability floor applied before logarithms.
    pub clamp_lo: f64,
}

impl Default for LsrHyperParams {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            distill_temperature: 1.0 / 3.0,
            gamma: 0.2,
            entropy_weight: 0.0,
            distill: DistillKind::Js,
            clamp_lo: 1e-6,
        }
    }
}

impl LsrHyperParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.temperature) {
            return Err(invalid_param(format!(
                "sharpening temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !positive(self.distill_temperature) {
            return Err(invalid_param(format!(
                "distillation temperature must be > 0, got {}",
                self.distill_temperature
            )));
        }
        if !(self.gamma >= 0.0) {
            return Err(invalid_param(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.entropy_weight >= 0.0) {
            return Err(invalid_param(format!(
                "entropy weight must be >= 0, got {}",
                self.entropy_weight
            )));
        }
        if !(self.clamp_lo > 0.0 && self.clamp_lo < 1.0) {
            return Err(invalid_param(format!(
                "clamp floor must lie in (0, 1), got {}",
                self.clamp_lo
            )));
        }
        Ok(())
    }
}

/// Symmetric cross-entropy weights; `log_zero` stands in for `ln 0` in the
/// reverse term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SymCeParams {
    pub alpha: f64,
    pub beta: f64,
    pub log_zero: f64,
}

impl Default for SymCeParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 1.0,
            log_zero: -4.0,
        }
    }
}

impl SymCeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(invalid_param("symmetric CE weights must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub scalar: f64,
    pub adjoint_o1: LogitBatch,
    pub adjoint_o2: LogitBatch,
}

impl LossOutput {
    fn zero(rows: usize, classes: usize) -> Self {
        Self {
            scalar: 0.0,
            adjoint_o1: LogitBatch::zeros(rows, classes),
            adjoint_o2: LogitBatch::zeros(rows, classes),
        }
    }

    /// `self += weight * other`, scalar and adjoints alike.
    fn add_scaled(&mut self, other: &LossOutput, weight: f64) {
        self.scalar += weight * other.scalar;
        self.adjoint_o1.add_scaled(&other.adjoint_o1, weight);
        self.adjoint_o2.add_scaled(&other.adjoint_o2, weight);
    }
}

fn check_labels(o: &LogitBatch, y: &[usize]) -> Result<()> {
    if o.rows() != y.len() {
        return Err(invalid_input(format!(
            "{} logit rows for {} labels",
            o.rows(),
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= o.classes()) {
        return Err(invalid_input(format!(
            "label {bad} outside [0, {})",
            o.classes()
        )));
    }
    Ok(())
}

fn check_heads(o1: &LogitBatch, o2: &LogitBatch) -> Result<()> {
    if o1.rows() != o2.rows() || o1.classes() != o2.classes() {
        return Err(invalid_input("the two logit heads differ in shape"));
    }
    Ok(())
}

fn check_mix(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid_param(format!("mix weight {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// Backpropagates `g` (gradient w.r.t. `p = softmax(z)`) to `z`, scaled by
/// `weight`, adding into `out`.
fn softmax_backward_into(p: &[f64], g: &[f64], weight: f64, out: &mut [f64]) {
    let inner: f64 = p.iter().zip(g).map(|(pi, gi)| pi * gi).sum();
    for ((o, &pi), &gi) in out.iter_mut().zip(p).zip(g) {
        *o += weight * pi * (gi - inner);
    }
}

/// Per-sample `−ln softmax(o)[y]`.
pub fn ce_per_sample(o: &LogitBatch, y: &[usize]) -> Result<Vec<f64>> {
    check_labels(o, y)?;
    Ok(o.iter_rows()
        .zip(y)
        .map(|(row, &c)| log_sum_exp(row) - row[c])
        .collect())
}

/// Mean cross-entropy; adjoint `(softmax(o) − onehot(y)) / batch`.
pub fn ce_loss(o: &LogitBatch, y: &[usize]) -> Result<LossOutput> {
    check_labels(o, y)?;
    let (rows, m) = (o.rows(), o.classes());
    let mut out = LossOutput::zero(rows, m);
    if rows == 0 {
        return Ok(out);
    }
    let inv = 1.0 / rows as f64;
    let mut total = 0.0;
    for (b, &c) in y.iter().enumerate() {
        let row = o.row(b);
        total += log_sum_exp(row) - row[c];
        let adj = out.adjoint_o1.row_mut(b);
        softmax_into(row, adj);
        adj[c] -= 1.0;
        adj.iter_mut().for_each(|v| *v *= inv);
    }
    out.scalar = total * inv;
    Ok(out)
}

/// `λ · p1 + (1 − λ) · p2`.
pub fn mixup_prediction(p1: &ProbVec, p2: &ProbVec, lambda: f64) -> Result<ProbVec> {
    check_mix(lambda)?;
    if p1.len() != p2.len() {
        return Err(invalid_input("predictions differ in length"));
    }
    Ok(ProbVec::from_raw(
        p1.as_slice()
            .iter()
            .zip(p2.as_slice())
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect(),
    ))
}

/// Per-sample loss and gradient w.r.t. the mixed prediction `p` for
/// `−ln max(sharpen(p, T)[y], lo)`. Returns `None` for the gradient when the
/// floor is active.
fn sharpened_ce_grad(p: &[f64], y: usize, t: f64, lo: f64, s: &mut [f64], g: &mut [f64]) -> (f64, bool) {
    sharpen_into(p, t, s);
    if !(s[y] >= lo) {
        g.iter_mut().for_each(|v| *v = 0.0);
        return (-lo.ln(), false);
    }
    let inv_t = 1.0 / t;
    for (i, gi) in g.iter_mut().enumerate() {
        let ratio = if p[i] > 0.0 { s[i] / p[i] } else { 0.0 };
        *gi = inv_t * ratio;
    }
    g[y] -= inv_t / p[y];
    (-s[y].ln(), true)
}

/// Per-sample `−ln max(sharpen(softmax(o), T)[y], lo)`, the selection
/// criterion of sharpened Co-teaching.
pub fn sharpened_ce_per_sample(o: &LogitBatch, y: &[usize], hp: &LsrHyperParams) -> Result<Vec<f64>> {
    check_labels(o, y)?;
    hp.validate()?;
    let m = o.classes();
    let (mut p, mut s) = (vec![0.0; m], vec![0.0; m]);
    Ok(o.iter_rows()
        .zip(y)
        .map(|(row, &c)| {
            softmax_into(row, &mut p);
            sharpen_into(&p, hp.temperature, &mut s);
            -s[c].max(hp.clamp_lo).ln()
        })
        .collect())
}

/// Per-sample classification term of [`lsr_cls_loss`], floored like the batch
/// loss.
pub fn lsr_cls_per_sample(
    o1: &LogitBatch,
    o2: &LogitBatch,
    y: &[usize],
    lambda: f64,
    hp: &LsrHyperParams,
) -> Result<Vec<f64>> {
    check_heads(o1, o2)?;
    check_labels(o1, y)?;
    check_mix(lambda)?;
    hp.validate()?;
    if hp.temperature == 1.0 && lambda == 1.0 {
        return ce_per_sample(o1, y);
    }
    let m = o1.classes();
    let (mut p1, mut p2, mut s) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    Ok(y.iter()
        .enumerate()
        .map(|(b, &c)| {
            softmax_into(o1.row(b), &mut p1);
            softmax_into(o2.row(b), &mut p2);
            for (a, &q) in p1.iter_mut().zip(&p2) {
                *a = lambda * *a + (1.0 - lambda) * q;
            }
            sharpen_into(&p1, hp.temperature, &mut s);
            -s[c].max(hp.clamp_lo).ln()
        })
        .collect())
}

/// Classification term: cross-entropy of the sharpened MixUp prediction.
///
/// Gradients flow through sharpening and mixing into both heads. With
/// `T = 1` and `λ = 1` the sharpened mixture is exactly `softmax(o1)`, and
/// the loss is evaluated as plain [`ce_loss`] on head 1.
pub fn lsr_cls_loss(
    o1: &LogitBatch,
    o2: &LogitBatch,
    y: &[usize],
    lambda: f64,
    hp: &LsrHyperParams,
) -> Result<LossOutput> {
    check_heads(o1, o2)?;
    check_labels(o1, y)?;
    check_mix(lambda)?;
    hp.validate()?;
    if hp.temperature == 1.0 && lambda == 1.0 {
        return ce_loss(o1, y);
    }
    let (rows, m) = (o1.rows(), o1.classes());
    let mut out = LossOutput::zero(rows, m);
    if rows == 0 {
        return Ok(out);
    }
    let inv = 1.0 / rows as f64;
    let mut p1 = vec![0.0; m];
    let mut p2 = vec![0.0; m];
    let mut p = vec![0.0; m];
    let mut s = vec![0.0; m];
    let mut g = vec![0.0; m];
    let mut total = 0.0;
    for (b, &c) in y.iter().enumerate() {
        softmax_into(o1.row(b), &mut p1);
        softmax_into(o2.row(b), &mut p2);
        for i in 0..m {
            p[i] = lambda * p1[i] + (1.0 - lambda) * p2[i];
        }
        let (loss, active) = sharpened_ce_grad(&p, c, hp.temperature, hp.clamp_lo, &mut s, &mut g);
        total += loss;
        if active {
            if lambda != 0.0 {
                softmax_backward_into(&p1, &g, lambda * inv, out.adjoint_o1.row_mut(b));
            }
            if lambda != 1.0 {
                softmax_backward_into(&p2, &g, (1.0 - lambda) * inv, out.adjoint_o2.row_mut(b));
            }
        }
    }
    out.scalar = total * inv;
    Ok(out)
}

/// `½ KL(q1‖U) + ½ KL(q2‖U)` with `U = ½(q1 + q2)`. Inputs need not sum to
/// one (clamped distributions are accepted as is).
pub fn js_divergence(q1: &[f64], q2: &[f64]) -> f64 {
    q1.iter()
        .zip(q2)
        .map(|(&a, &b)| {
            let u = 0.5 * (a + b);
            let ka = if a > 0.0 { a * (a / u).ln() } else { 0.0 };
            let kb = if b > 0.0 { b * (b / u).ln() } else { 0.0 };
            0.5 * (ka + kb)
        })
        .sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-sample discrepancy between clamped tempered predictions and its
/// gradients with respect to the clamped vectors.
fn discrepancy(kind: DistillKind, c1: &[f64], c2: &[f64], g1: &mut [f64], g2: &mut [f64]) -> f64 {
    match kind {
        DistillKind::Js => {
            for i in 0..c1.len() {
                let u = 0.5 * (c1[i] + c2[i]);
                g1[i] = 0.5 * (c1[i] / u).ln();
                g2[i] = 0.5 * (c2[i] / u).ln();
            }
            js_divergence(c1, c2)
        }
        DistillKind::L1 => {
            let mut total = 0.0;
            for i in 0..c1.len() {
                let d = c1[i] - c2[i];
                total += d.abs();
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                g1[i] = sign;
                g2[i] = -sign;
            }
            total
        }
        DistillKind::L2 => {
            let mut total = 0.0;
            for i in 0..c1.len() {
                let d = c1[i] - c2[i];
                total += d * d;
                g1[i] = 2.0 * d;
                g2[i] = -2.0 * d;
            }
            total
        }
        DistillKind::Cosine => {
            // ½[(1 − cos(c1, sg(c2))) + (1 − cos(sg(c1), c2))]: the value is
            // 1 − cos, each head receives half of its gradient.
            let n1 = dot(c1, c1).sqrt();
            let n2 = dot(c2, c2).sqrt();
            let cos = dot(c1, c2) / (n1 * n2);
            for i in 0..c1.len() {
                g1[i] = -0.5 * (c2[i] / (n1 * n2) - cos * c1[i] / (n1 * n1));
                g2[i] = -0.5 * (c1[i] / (n1 * n2) - cos * c2[i] / (n2 * n2));
            }
            1.0 - cos
        }
        DistillKind::None => {
            g1.iter_mut().for_each(|v| *v = 0.0);
            g2.iter_mut().for_each(|v| *v = 0.0);
            0.0
        }
    }
}

/// Instance-level self-distillation between the two heads.
///
/// Both heads are softened with temperature `T_d`, floored at `clamp_lo`
/// (no renormalization), then compared with the configured discrepancy.
pub fn self_distill_loss(o1: &LogitBatch, o2: &LogitBatch, hp: &LsrHyperParams) -> Result<LossOutput> {
    check_heads(o1, o2)?;
    hp.validate()?;
    if hp.distill == DistillKind::None {
        return Err(invalid_param("self-distillation requested with kind none"));
    }
    let (rows, m) = (o1.rows(), o1.classes());
    let mut out = LossOutput::zero(rows, m);
    if rows == 0 {
        return Ok(out);
    }
    let inv = 1.0 / rows as f64;
    let t_d = hp.distill_temperature;
    let lo = hp.clamp_lo;
    let mut z = vec![0.0; m];
    let (mut q1, mut q2) = (vec![0.0; m], vec![0.0; m]);
    let (mut c1, mut c2) = (vec![0.0; m], vec![0.0; m]);
    let (mut g1, mut g2) = (vec![0.0; m], vec![0.0; m]);
    let mut total = 0.0;
    for b in 0..rows {
        for (zi, &oi) in z.iter_mut().zip(o1.row(b)) {
            *zi = oi / t_d;
        }
        softmax_into(&z, &mut q1);
        for (zi, &oi) in z.iter_mut().zip(o2.row(b)) {
            *zi = oi / t_d;
        }
        softmax_into(&z, &mut q2);
        for i in 0..m {
            c1[i] = q1[i].clamp(lo, 1.0);
            c2[i] = q2[i].clamp(lo, 1.0);
        }
        total += discrepancy(hp.distill, &c1, &c2, &mut g1, &mut g2);
        // the floor passes no gradient
        for i in 0..m {
            if q1[i] < lo {
                g1[i] = 0.0;
            }
            if q2[i] < lo {
                g2[i] = 0.0;
            }
        }
        softmax_backward_into(&q1, &g1, inv / t_d, out.adjoint_o1.row_mut(b));
        softmax_backward_into(&q2, &g2, inv / t_d, out.adjoint_o2.row_mut(b));
    }
    out.scalar = total * inv;
    Ok(out)
}

/// `Loss_cls + γ_t · Loss_reg`.
pub fn lsr_total_loss(
    o1: &LogitBatch,
    o2: &LogitBatch,
    y: &[usize],
    lambda: f64,
    gamma_t: f64,
    hp: &LsrHyperParams,
) -> Result<LossOutput> {
    if !(gamma_t >= 0.0) {
        return Err(invalid_param(format!("gamma_t must be >= 0, got {gamma_t}")));
    }
    let mut out = lsr_cls_loss(o1, o2, y, lambda, hp)?;
    if gamma_t > 0.0 && hp.distill != DistillKind::None {
        out.add_scaled(&self_distill_loss(o1, o2, hp)?, gamma_t);
    }
    Ok(out)
}

/// Mean over heads of the Shannon entropy of `softmax(o)`.
pub fn entropy_loss(o1: &LogitBatch, o2: &LogitBatch) -> Result<LossOutput> {
    check_heads(o1, o2)?;
    let (rows, m) = (o1.rows(), o1.classes());
    let mut out = LossOutput::zero(rows, m);
    if rows == 0 {
        return Ok(out);
    }
    let inv = 1.0 / rows as f64;
    let mut p = vec![0.0; m];
    let mut total = 0.0;
    for (head, o) in [o1, o2].into_iter().enumerate() {
        for b in 0..rows {
            let row = o.row(b);
            let lse = log_sum_exp(row);
            softmax_into(row, &mut p);
            let h: f64 = -p.iter().zip(row).map(|(pi, oi)| pi * (oi - lse)).sum::<f64>();
            total += 0.5 * h;
            let adj = if head == 0 {
                out.adjoint_o1.row_mut(b)
            } else {
                out.adjoint_o2.row_mut(b)
            };
            // dH/do_i = −p_i (ln p_i + H)
            for i in 0..m {
                adj[i] = -0.5 * inv * p[i] * ((row[i] - lse) + h);
            }
        }
    }
    out.scalar = total * inv;
    Ok(out)
}

/// LSR plus `λ_e` times the mean prediction entropy of both heads.
pub fn lsr_plus_loss(
    o1: &LogitBatch,
    o2: &LogitBatch,
    y: &[usize],
    lambda: f64,
    gamma_t: f64,
    hp: &LsrHyperParams,
) -> Result<LossOutput> {
    let mut out = lsr_total_loss(o1, o2, y, lambda, gamma_t, hp)?;
    if hp.entropy_weight > 0.0 {
        out.add_scaled(&entropy_loss(o1, o2)?, hp.entropy_weight);
    }
    Ok(out)
}

/// `α · CE(p, y) + β · RCE(p, y)` with `RCE = −A · (1 − p[y])`.
pub fn symmetric_ce_loss(o: &LogitBatch, y: &[usize], sp: &SymCeParams) -> Result<LossOutput> {
    check_labels(o, y)?;
    sp.validate()?;
    let (rows, m) = (o.rows(), o.classes());
    let mut out = LossOutput::zero(rows, m);
    if rows == 0 {
        return Ok(out);
    }
    let inv = 1.0 / rows as f64;
    let mut p = vec![0.0; m];
    let mut total = 0.0;
    for (b, &c) in y.iter().enumerate() {
        let row = o.row(b);
        softmax_into(row, &mut p);
        let ce = log_sum_exp(row) - row[c];
        let rce = -sp.log_zero * (1.0 - p[c]);
        total += sp.alpha * ce + sp.beta * rce;
        let adj = out.adjoint_o1.row_mut(b);
        let py = p[c];
        for i in 0..m {
            let onehot = if i == c { 1.0 } else { 0.0 };
            adj[i] = inv * (sp.alpha * (p[i] - onehot) + sp.beta * sp.log_zero * py * (onehot - p[i]));
        }
    }
    out.scalar = total * inv;
    Ok(out)
}

/// Symmetric CE on the mixed logits `λ·o1 + (1 − λ)·o2`, plus `γ_t` times the
/// self-distillation term.
pub fn symmetric_ce_lsr_loss(
    o1: &LogitBatch,
    o2: &LogitBatch,
    y: &[usize],
    lambda: f64,
    gamma_t: f64,
    hp: &LsrHyperParams,
    sp: &SymCeParams,
) -> Result<LossOutput> {
    check_heads(o1, o2)?;
    check_mix(lambda)?;
    let mut mixed = o1.clone();
    for (m, &b) in mixed.as_mut_slice().iter_mut().zip(o2.as_slice()) {
        *m = lambda * *m + (1.0 - lambda) * b;
    }
    let sce = symmetric_ce_loss(&mixed, y, sp)?;
    let mut out = LossOutput::zero(o1.rows(), o1.classes());
    out.scalar = sce.scalar;
    out.adjoint_o1.add_scaled(&sce.adjoint_o1, lambda);
    out.adjoint_o2.add_scaled(&sce.adjoint_o1, 1.0 - lambda);
    if gamma_t > 0.0 && hp.distill != DistillKind::None {
        out.add_scaled(&self_distill_loss(o1, o2, hp)?, gamma_t);
    }
    Ok(out)
}

/// Indices of the `⌈R · batch⌉` smallest losses, ties broken by ascending
/// index; returned in ascending index order.
pub fn small_loss_select(losses: &[f64], keep_ratio: f64) -> Result<Vec<usize>> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(invalid_param(format!(
            "keep ratio must lie in (0, 1], got {keep_ratio}"
        )));
    }
    // shave rounding noise so that e.g. 0.7 * 10 keeps 7, not 8
    let keep = ((keep_ratio * losses.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    order.truncate(keep.min(losses.len()));
    order.sort_unstable();
    Ok(order)
}
