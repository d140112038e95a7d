//! Label-noise injection with exact per-class flip counts.
//!
//! Within each true class `c`, exactly `round(ε · count_c)` samples are picked
//! by a seeded shuffle and relabeled:
//!
//! * symmetric: spread as evenly as possible over the other `M − 1` classes,
//!   with the remainder going to a seeded choice of classes;
//! * pairwise: all moved to `(c + 1) mod M`.
//!
//! Features and true labels are never touched.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{invalid_param, Result};
use crate::numerics::{Purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Pairwise,
    None,
}

impl std::str::FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "symmetric" => Ok(Self::Symmetric),
            "pairwise" => Ok(Self::Pairwise),
            "none" => Ok(Self::None),
            other => Err(format!(
                "unknown noise type {other:?} (expected symmetric, pairwise or none)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub ratio: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, ratio: f64, seed: u64) -> Self {
        Self { kind, ratio, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.ratio) {
            return Err(invalid_param(format!(
                "noise ratio must lie in [0, 1), got {}",
                self.ratio
            )));
        }
        if self.kind == NoiseKind::Pairwise && self.ratio > 0.5 {
            log::warn!(
                "pairwise noise ratio {} exceeds 0.5; the flipped class becomes the majority",
                self.ratio
            );
        }
        Ok(())
    }
}

/// Applies whichever noise model `spec.kind` names.
pub fn inject_noise(ds: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset> {
    match spec.kind {
        NoiseKind::Symmetric => inject_symmetric_noise(ds, spec),
        NoiseKind::Pairwise => inject_pairwise_noise(ds, spec),
        NoiseKind::None => {
            spec.validate()?;
            Ok(ds.clone())
        }
    }
}

fn check(ds: &LabeledDataset, spec: &NoiseSpec, kind: NoiseKind) -> Result<()> {
    if spec.kind != kind {
        return Err(invalid_param(format!(
            "expected a {kind:?} noise spec, got {:?}",
            spec.kind
        )));
    }
    spec.validate()?;
    if ds.num_classes() < 2 {
        return Err(invalid_param("label noise needs at least two classes"));
    }
    Ok(())
}

/// For each true class, the seeded selection of samples to relabel.
fn flipped_per_class(ds: &LabeledDataset, spec: &NoiseSpec) -> Vec<Vec<usize>> {
    let m = ds.num_classes();
    let mut by_class = vec![Vec::new(); m];
    for (i, &y) in ds.true_labels().iter().enumerate() {
        by_class[y].push(i);
    }
    by_class
        .into_iter()
        .enumerate()
        .map(|(c, mut idx)| {
            let k = (spec.ratio * idx.len() as f64).round() as usize;
            let mut rng = RngStream::new(spec.seed, &[Purpose::Noise.into(), c as u64]);
            idx.shuffle(&mut rng);
            idx.truncate(k);
            idx
        })
        .collect()
}

pub fn inject_symmetric_noise(ds: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset> {
    check(ds, spec, NoiseKind::Symmetric)?;
    let m = ds.num_classes();
    let mut observed = ds.true_labels().to_vec();
    for (c, picked) in flipped_per_class(ds, spec).into_iter().enumerate() {
        let others: Vec<usize> = (0..m).filter(|&o| o != c).collect();
        let base = picked.len() / others.len();
        let extra = picked.len() % others.len();
        let mut lucky = others.clone();
        let mut rng = RngStream::new(spec.seed, &[Purpose::Noise.into(), c as u64, 1]);
        lucky.shuffle(&mut rng);
        lucky.truncate(extra);
        let targets = others.iter().flat_map(|&o| {
            let n = base + usize::from(lucky.contains(&o));
            std::iter::repeat_n(o, n)
        });
        for (i, target) in picked.into_iter().zip(targets) {
            observed[i] = target;
        }
    }
    ds.with_observed_labels(observed)
}

pub fn inject_pairwise_noise(ds: &LabeledDataset, spec: &NoiseSpec) -> Result<LabeledDataset> {
    check(ds, spec, NoiseKind::Pairwise)?;
    let m = ds.num_classes();
    let mut observed = ds.true_labels().to_vec();
    for (c, picked) in flipped_per_class(ds, spec).into_iter().enumerate() {
        for i in picked {
            observed[i] = (c + 1) % m;
        }
    }
    ds.with_observed_labels(observed)
}

/// `counts[true][observed]`.
pub fn transition_counts(ds: &LabeledDataset) -> Vec<Vec<usize>> {
    let m = ds.num_classes();
    let mut counts = vec![vec![0; m]; m];
    for (&t, &o) in ds.true_labels().iter().zip(ds.observed_labels()) {
        counts[t][o] += 1;
    }
    counts
}

/// Row-normalized empirical transition matrix `P(observed | true)`. Rows of
/// empty classes are all zero.
pub fn transition_matrix(ds: &LabeledDataset) -> Vec<Vec<f64>> {
    transition_counts(ds)
        .into_iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect()
}

/// The ideal transition matrix for a noise model.
pub fn target_transition(kind: NoiseKind, ratio: f64, m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| match kind {
                    NoiseKind::None => f64::from(u8::from(i == j)),
                    _ if i == j => 1.0 - ratio,
                    NoiseKind::Symmetric => ratio / (m - 1) as f64,
                    NoiseKind::Pairwise if j == (i + 1) % m => ratio,
                    NoiseKind::Pairwise => 0.0,
                })
                .collect()
        })
        .collect()
}
