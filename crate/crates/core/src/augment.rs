//! Stochastic augmentations producing the second view of each sample.
//!
//! Image ops read the [`ImageShape`] recorded on the dataset (row-major
//! `(y, x, channel)`); feature jitter works on any feature vector.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::ImageShape;
use crate::error::{invalid_param, Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentOp {
    HorizontalFlip { prob: f64 },
    Rotation { max_degrees: f64 },
    FeatureJitter { sigma: f64 },
}

impl AugmentOp {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentOp::HorizontalFlip { prob } if !(0.0..=1.0).contains(&prob) => {
                Err(invalid_param(format!("flip probability {prob} outside [0, 1]")))
            }
            AugmentOp::Rotation { max_degrees } if !(0.0..=180.0).contains(&max_degrees) => Err(
                invalid_param(format!("rotation bound {max_degrees} outside [0, 180]")),
            ),
            AugmentOp::FeatureJitter { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(invalid_param(format!("jitter sigma {sigma} must be >= 0")))
            }
            _ => Ok(()),
        }
    }

    fn is_identity(&self) -> bool {
        match *self {
            AugmentOp::HorizontalFlip { prob } => prob == 0.0,
            AugmentOp::Rotation { max_degrees } => max_degrees == 0.0,
            AugmentOp::FeatureJitter { sigma } => sigma == 0.0,
        }
    }

    fn needs_image(&self) -> bool {
        !matches!(self, AugmentOp::FeatureJitter { .. })
    }
}

/// Ordered list of augmentation ops. The empty policy is the identity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    #[serde(default)]
    pub ops: Vec<AugmentOp>,
}

impl AugmentPolicy {
    pub fn new(ops: Vec<AugmentOp>) -> Self {
        Self { ops }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        self.ops.iter().try_for_each(AugmentOp::validate)
    }

    /// True when every op is a no-op for all inputs.
    pub fn is_identity(&self) -> bool {
        self.ops.iter().all(AugmentOp::is_identity)
    }

    /// Fails early if an image op is paired with non-image features.
    pub fn check_layout(&self, shape: Option<ImageShape>) -> Result<()> {
        match self.ops.iter().find(|op| op.needs_image()) {
            Some(op) if shape.is_none() => Err(Error::UnsupportedAugmentation(format!(
                "{op:?} needs image features, dataset has none"
            ))),
            _ => Ok(()),
        }
    }

    /// Applies the ops in order; op `i` draws from `rng.derive(i)`.
    pub fn apply(&self, x: &[f64], shape: Option<ImageShape>, rng: &RngStream) -> Result<Vec<f64>> {
        let mut out = x.to_vec();
        for (i, op) in self.ops.iter().enumerate() {
            let mut sub = rng.derive(i as u64);
            out = match *op {
                AugmentOp::HorizontalFlip { prob } => {
                    horizontal_flip(&out, require_image(shape, op)?, prob, &mut sub)?
                }
                AugmentOp::Rotation { max_degrees } => {
                    random_rotation(&out, require_image(shape, op)?, max_degrees, &mut sub)?
                }
                AugmentOp::FeatureJitter { sigma } => feature_jitter(&out, sigma, &mut sub)?,
            };
        }
        Ok(out)
    }
}

/// Free-function form of [`AugmentPolicy::apply`].
pub fn apply(
    policy: &AugmentPolicy,
    x: &[f64],
    shape: Option<ImageShape>,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    policy.apply(x, shape, rng)
}

fn require_image(shape: Option<ImageShape>, op: &AugmentOp) -> Result<ImageShape> {
    shape.ok_or_else(|| {
        Error::UnsupportedAugmentation(format!("{op:?} needs image features"))
    })
}

fn check_len(image: &[f64], shape: ImageShape) -> Result<()> {
    if image.len() != shape.len() {
        return Err(Error::InvalidInput(format!(
            "image has {} values, shape {}x{}x{} needs {}",
            image.len(),
            shape.height,
            shape.width,
            shape.channels,
            shape.len()
        )));
    }
    Ok(())
}

/// Mirrors the image left-right with probability `prob`.
pub fn horizontal_flip(
    image: &[f64],
    shape: ImageShape,
    prob: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_len(image, shape)?;
    if prob <= 0.0 || rng.random::<f64>() >= prob {
        return Ok(image.to_vec());
    }
    Ok(flip_columns(image, shape))
}

fn flip_columns(image: &[f64], shape: ImageShape) -> Vec<f64> {
    let ImageShape {
        height,
        width,
        channels,
    } = shape;
    let mut out = vec![0.0; image.len()];
    for y in 0..height {
        for x in 0..width {
            let src = (y * width + (width - 1 - x)) * channels;
            let dst = (y * width + x) * channels;
            out[dst..dst + channels].copy_from_slice(&image[src..src + channels]);
        }
    }
    out
}

/// Rotates by an angle drawn uniformly from `[-max_degrees, max_degrees]`.
pub fn random_rotation(
    image: &[f64],
    shape: ImageShape,
    max_degrees: f64,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    check_len(image, shape)?;
    if max_degrees == 0.0 {
        return Ok(image.to_vec());
    }
    let angle = rng.random_range(-max_degrees..=max_degrees);
    Ok(rotate(image, shape, angle))
}

/// Rotation about the image center by `degrees`, bilinear resampling,
/// zero outside the source image.
pub fn rotate(image: &[f64], shape: ImageShape, degrees: f64) -> Vec<f64> {
    let ImageShape {
        height,
        width,
        channels,
    } = shape;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let pixel = |x: isize, y: isize, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= width as isize || y >= height as isize {
            0.0
        } else {
            image[(y as usize * width + x as usize) * channels + ch]
        }
    };
    let mut out = vec![0.0; image.len()];
    for y in 0..height {
        for x in 0..width {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // inverse map: output pixel -> source location
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..channels {
                let top = (1.0 - fx) * pixel(x0, y0, ch) + fx * pixel(x0 + 1, y0, ch);
                let bottom = (1.0 - fx) * pixel(x0, y0 + 1, ch) + fx * pixel(x0 + 1, y0 + 1, ch);
                out[(y * width + x) * channels + ch] = (1.0 - fy) * top + fy * bottom;
            }
        }
    }
    out
}

/// Adds independent `N(0, sigma²)` noise to every coordinate.
pub fn feature_jitter(x: &[f64], sigma: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(invalid_param(format!("jitter sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(x.to_vec());
    }
    Ok(x
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            v + sigma * z
        })
        .collect())
}
