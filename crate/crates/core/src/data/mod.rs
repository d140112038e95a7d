//! Datasets, label noise, and client partitioning.

mod io;
mod noise;
mod partition;

pub use io::{load_csv, load_idx, write_idx_images, write_idx_labels};
pub use noise::{
    inject_noise, inject_pairwise_noise, inject_symmetric_noise, target_transition,
    transition_counts, transition_matrix, NoiseKind, NoiseSpec,
};
pub use partition::{partition_iid, partition_noniid, ClientShard};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::numerics::{Purpose, RngStream};

/// Spatial layout of image features, stored row-major as `(y, x, channel)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Features with ground-truth labels and observed (possibly corrupted) labels.
///
/// Immutable once built; noise injection returns a new dataset that shares
/// nothing with its input but the values.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f64>,
    dim: usize,
    image_shape: Option<ImageShape>,
    true_labels: Vec<usize>,
    observed_labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    /// Builds a clean dataset; observed labels start equal to true labels.
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        true_labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(invalid_input("feature dimension must be positive"));
        }
        if num_classes == 0 {
            return Err(invalid_input("need at least one class"));
        }
        if features.len() != dim * true_labels.len() {
            return Err(invalid_input(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                features.len(),
                true_labels.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature in sample {}",
                pos / dim
            )));
        }
        if let Some((i, &y)) = true_labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y >= num_classes)
        {
            return Err(Error::Data(format!(
                "label {y} of sample {i} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            features,
            dim,
            image_shape: None,
            observed_labels: true_labels.clone(),
            true_labels,
            num_classes,
        })
    }

    /// Attaches image metadata; `shape.len()` must equal the feature dimension.
    pub fn with_image_shape(mut self, shape: ImageShape) -> Result<Self> {
        if shape.len() != self.dim {
            return Err(invalid_input(format!(
                "image shape {}x{}x{} does not match feature dimension {}",
                shape.height, shape.width, shape.channels, self.dim
            )));
        }
        self.image_shape = Some(shape);
        Ok(self)
    }

    /// Replaces observed labels, keeping features and true labels.
    pub fn with_observed_labels(&self, observed: Vec<usize>) -> Result<Self> {
        if observed.len() != self.len() {
            return Err(invalid_input("observed label count differs from sample count"));
        }
        if observed.iter().any(|&y| y >= self.num_classes) {
            return Err(Error::Data("observed label out of range".into()));
        }
        Ok(Self {
            observed_labels: observed,
            ..self.clone()
        })
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.image_shape
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn observed_labels(&self) -> &[usize] {
        &self.observed_labels
    }

    /// Number of samples per true class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.true_labels {
            counts[y] += 1;
        }
        counts
    }

    /// Fraction of samples whose observed label differs from the true label.
    pub fn noise_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let flipped = self
            .true_labels
            .iter()
            .zip(&self.observed_labels)
            .filter(|(a, b)| a != b)
            .count();
        flipped as f64 / self.len() as f64
    }
}

/// Within-class standard deviation of the synthetic clusters.
pub const SYNTHETIC_CLUSTER_STD: f64 = 0.25;

/// Gaussian class clusters whose centers lie on the unit sphere.
#[derive(Debug, Clone)]
pub struct SyntheticClusters {
    centers: Vec<f64>,
    num_classes: usize,
    dim: usize,
    seed: u64,
}

impl SyntheticClusters {
    pub fn new(num_classes: usize, dim: usize, seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(invalid_param("need at least one class"));
        }
        if dim < 2 {
            return Err(invalid_param("synthetic data needs dimension >= 2"));
        }
        let mut rng = RngStream::new(seed, &[Purpose::Data.into(), 0]);
        let mut centers = Vec::with_capacity(num_classes * dim);
        for _ in 0..num_classes {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            centers.extend(v.iter().map(|x| x / norm));
        }
        Ok(Self {
            centers,
            num_classes,
            dim,
            seed,
        })
    }

    pub fn center(&self, class: usize) -> &[f64] {
        &self.centers[class * self.dim..(class + 1) * self.dim]
    }

    /// Draws `n` samples with labels `i mod M`; `split` selects an
    /// independent sample stream (0 = train, 1 = test, ...).
    pub fn sample(&self, n: usize, split: u64) -> Result<LabeledDataset> {
        let mut rng = RngStream::new(self.seed, &[Purpose::Data.into(), 1, split]);
        let mut features = Vec::with_capacity(n * self.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % self.num_classes;
            labels.push(y);
            for &c in self.center(y) {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(c + SYNTHETIC_CLUSTER_STD * z);
            }
        }
        LabeledDataset::new(features, self.dim, labels, self.num_classes)
    }
}

/// Balanced synthetic dataset of `n` samples over `M` classes in `d`
/// dimensions. Deterministic in `seed`.
pub fn generate_synthetic(n: usize, m: usize, d: usize, seed: u64) -> Result<LabeledDataset> {
    if n < m {
        return Err(invalid_param(format!("need n >= M, got n={n}, M={m}")));
    }
    SyntheticClusters::new(m, d, seed)?.sample(n, 0)
}

/// Train and test sets drawn from the same synthetic clusters.
pub fn generate_synthetic_split(
    n_train: usize,
    n_test: usize,
    m: usize,
    d: usize,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if n_train < m {
        return Err(invalid_param(format!(
            "need n >= M, got n={n_train}, M={m}"
        )));
    }
    let clusters = SyntheticClusters::new(m, d, seed)?;
    Ok((clusters.sample(n_train, 0)?, clusters.sample(n_test, 1)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_balanced_and_deterministic() {
        let ds = generate_synthetic(100, 10, 8, 3).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.class_counts(), vec![10; 10]);
        assert_eq!(ds, generate_synthetic(100, 10, 8, 3).unwrap());
        assert_ne!(
            ds.features(),
            generate_synthetic(100, 10, 8, 4).unwrap().features()
        );
        assert_eq!(ds.true_labels(), ds.observed_labels());
    }

    #[test]
    fn synthetic_centers_are_unit_vectors() {
        let c = SyntheticClusters::new(5, 16, 1).unwrap();
        for k in 0..5 {
            let norm: f64 = c.center(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_rejects_bad_sizes() {
        assert!(generate_synthetic(5, 10, 8, 0).is_err());
        assert!(generate_synthetic(100, 10, 1, 0).is_err());
    }

    #[test]
    fn split_shares_centers_but_not_samples() {
        let (train, test) = generate_synthetic_split(50, 20, 5, 4, 9).unwrap();
        assert_eq!(train.len(), 50);
        assert_eq!(test.len(), 20);
        assert_ne!(&train.features()[..4], &test.features()[..4]);
        let again = generate_synthetic(50, 5, 4, 9).unwrap();
        assert_eq!(train, again);
    }

    #[test]
    fn dataset_validation() {
        assert!(LabeledDataset::new(vec![0.0; 4], 2, vec![0, 3], 3).is_err());
        assert!(LabeledDataset::new(vec![0.0; 5], 2, vec![0, 1], 3).is_err());
        assert!(LabeledDataset::new(vec![0.0, f64::NAN], 2, vec![0], 3).is_err());
        let ds = LabeledDataset::new(vec![0.0; 4], 2, vec![0, 1], 3).unwrap();
        assert!(ds.clone().with_image_shape(ImageShape::new(2, 2, 1)).is_err());
        assert!(ds.with_image_shape(ImageShape::new(1, 2, 1)).is_ok());
    }
}
