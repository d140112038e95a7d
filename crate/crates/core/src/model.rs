//! A small MLP classifier with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector so that aggregation and SGD are plain
//! vector arithmetic. Layer `l` stores its `out × in` weight matrix
//! row-major, followed by its `out` biases. Hidden layers use ReLU; the
//! output layer emits raw logits.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::numerics::{LogitBatch, LogitVec, Purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LayerShape {
    fn num_params(&self) -> usize {
        (self.in_dim + 1) * self.out_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    flat: Vec<f64>,
    layers: Vec<LayerShape>,
}

/// Gradient of a scalar loss, aligned with [`ModelParams::flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub flat: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            flat: vec![0.0; params.num_params()],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.flat.iter_mut().for_each(|g| *g *= factor);
    }
}

fn layers_from_sizes(sizes: &[usize]) -> Result<Vec<LayerShape>> {
    if sizes.len() < 2 {
        return Err(invalid_param("need at least an input and an output size"));
    }
    if sizes.contains(&0) {
        return Err(invalid_param("layer sizes must be positive"));
    }
    Ok(sizes
        .windows(2)
        .map(|w| LayerShape {
            in_dim: w[0],
            out_dim: w[1],
        })
        .collect())
}

impl ModelParams {
    pub fn from_flat(layers: Vec<LayerShape>, flat: Vec<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid_param("model needs at least one layer"));
        }
        if layers.windows(2).any(|w| w[0].out_dim != w[1].in_dim) {
            return Err(invalid_param("consecutive layer dimensions do not chain"));
        }
        let expected: usize = layers.iter().map(LayerShape::num_params).sum();
        if flat.len() != expected {
            return Err(invalid_input(format!(
                "{} parameters given, layers need {expected}",
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(invalid_input("parameters must be finite"));
        }
        Ok(Self { flat, layers })
    }

    /// All-zero parameters for the given layer sizes.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        let layers = layers_from_sizes(sizes)?;
        let p = layers.iter().map(LayerShape::num_params).sum();
        Ok(Self {
            flat: vec![0.0; p],
            layers,
        })
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].in_dim];
        s.extend(self.layers.iter().map(|l| l.out_dim));
        s
    }

    pub fn num_params(&self) -> usize {
        self.flat.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    fn offset(&self, layer: usize) -> usize {
        self.layers[..layer].iter().map(LayerShape::num_params).sum()
    }

    /// Row-major `out × in` weights of a layer.
    pub fn weights(&self, layer: usize) -> &[f64] {
        let off = self.offset(layer);
        let s = self.layers[layer];
        &self.flat[off..off + s.in_dim * s.out_dim]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        let s = self.layers[layer];
        let off = self.offset(layer) + s.in_dim * s.out_dim;
        &self.flat[off..off + s.out_dim]
    }

    pub(crate) fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.layers == other.layers
    }

    /// `flat ← flat − lr · grads`.
    pub fn sgd_step_in_place(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.flat.len() != self.flat.len() {
            return Err(invalid_input("gradient length differs from parameter count"));
        }
        for (w, g) in self.flat.iter_mut().zip(&grads.flat) {
            *w -= lr * g;
        }
        Ok(())
    }
}

/// Xavier-uniform weights, zero biases. `sizes = [d, hidden.., M]` with at
/// least one hidden layer.
pub fn init_params(sizes: &[usize], seed: u64) -> Result<ModelParams> {
    init_params_from(sizes, &mut RngStream::new(seed, &[Purpose::Init.into()]))
}

/// [`init_params`] drawing from an explicit stream.
pub fn init_params_from(sizes: &[usize], rng: &mut RngStream) -> Result<ModelParams> {
    if sizes.len() < 3 {
        return Err(invalid_param(format!(
            "layer sizes {sizes:?} need an input, at least one hidden layer and an output"
        )));
    }
    let mut params = ModelParams::zeros(sizes)?;
    let mut off = 0;
    for s in params.layers.clone() {
        let bound = (6.0 / (s.in_dim + s.out_dim) as f64).sqrt();
        for w in &mut params.flat[off..off + s.in_dim * s.out_dim] {
            *w = rng.random_range(-bound..bound);
        }
        off += s.num_params();
    }
    Ok(params)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators; fixed order keeps results reproducible
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Layer inputs recorded during a batch forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    /// `inputs[l]` is the `rows × in_dim` input of layer `l`.
    inputs: Vec<Vec<f64>>,
    logits: LogitBatch,
}

impl ForwardTape {
    pub fn logits(&self) -> &LogitBatch {
        &self.logits
    }

    pub fn rows(&self) -> usize {
        self.logits.rows()
    }

    /// Reverse pass: gradient of `Σ_rows ⟨adjoint_row, logits_row⟩` with
    /// respect to every parameter.
    pub fn backward(&self, params: &ModelParams, adjoint: &LogitBatch) -> Result<Gradients> {
        let rows = self.rows();
        if adjoint.rows() != rows || adjoint.classes() != params.num_classes() {
            return Err(invalid_input(format!(
                "adjoint is {}x{}, logits are {rows}x{}",
                adjoint.rows(),
                adjoint.classes(),
                params.num_classes()
            )));
        }
        let mut grads = Gradients::zeros_like(params);
        let mut upstream = adjoint.as_slice().to_vec();
        for l in (0..params.layers.len()).rev() {
            let s = params.layers[l];
            let off = params.offset(l);
            let (gw, gb) = grads.flat[off..off + s.num_params()].split_at_mut(s.in_dim * s.out_dim);
            let input = &self.inputs[l];
            for b in 0..rows {
                let a = &input[b * s.in_dim..(b + 1) * s.in_dim];
                let g = &upstream[b * s.out_dim..(b + 1) * s.out_dim];
                for (o, &go) in g.iter().enumerate() {
                    if go != 0.0 {
                        axpy(go, a, &mut gw[o * s.in_dim..(o + 1) * s.in_dim]);
                        gb[o] += go;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = params.weights(l);
            let mut down = vec![0.0; rows * s.in_dim];
            for b in 0..rows {
                let g = &upstream[b * s.out_dim..(b + 1) * s.out_dim];
                let d = &mut down[b * s.in_dim..(b + 1) * s.in_dim];
                for (o, &go) in g.iter().enumerate() {
                    if go != 0.0 {
                        axpy(go, &w[o * s.in_dim..(o + 1) * s.in_dim], d);
                    }
                }
                // ReLU mask: the stored input is the post-activation value
                for (di, &ai) in d.iter_mut().zip(&input[b * s.in_dim..(b + 1) * s.in_dim]) {
                    if ai <= 0.0 {
                        *di = 0.0;
                    }
                }
            }
            upstream = down;
        }
        Ok(grads)
    }
}

/// Batch forward pass over `xs` (`rows × input_dim`, row-major), keeping the
/// intermediate activations for [`ForwardTape::backward`].
pub fn forward_tape(params: &ModelParams, xs: &[f64]) -> Result<ForwardTape> {
    let d = params.input_dim();
    if xs.len() % d != 0 {
        return Err(invalid_input(format!(
            "batch of {} values is not a multiple of input dimension {d}",
            xs.len()
        )));
    }
    let rows = xs.len() / d;
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut current = xs.to_vec();
    for (l, s) in params.layers.iter().enumerate() {
        let w = params.weights(l);
        let bias = params.biases(l);
        let mut out = vec![0.0; rows * s.out_dim];
        for b in 0..rows {
            let x = &current[b * s.in_dim..(b + 1) * s.in_dim];
            let z = &mut out[b * s.out_dim..(b + 1) * s.out_dim];
            for (o, zo) in z.iter_mut().enumerate() {
                let v = bias[o] + dot(&w[o * s.in_dim..(o + 1) * s.in_dim], x);
                *zo = if l < last { v.max(0.0) } else { v };
            }
        }
        inputs.push(std::mem::replace(&mut current, out));
    }
    Ok(ForwardTape {
        inputs,
        logits: LogitBatch::new(current, params.num_classes())?,
    })
}

/// Logits for a batch of samples.
pub fn forward_batch(params: &ModelParams, xs: &[f64]) -> Result<LogitBatch> {
    Ok(forward_tape(params, xs)?.logits)
}

/// Logits for one sample.
pub fn forward(params: &ModelParams, x: &[f64]) -> Result<LogitVec> {
    if x.len() != params.input_dim() {
        return Err(invalid_input(format!(
            "input has {} features, model expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    LogitVec::new(forward_batch(params, x)?.into_inner())
}

/// Gradient of `Σ ⟨adjoint, logits⟩` for the batch `xs`.
pub fn backward(params: &ModelParams, xs: &[f64], adjoint: &LogitBatch) -> Result<Gradients> {
    forward_tape(params, xs)?.backward(params, adjoint)
}

/// Returns `params − lr · grads`.
pub fn sgd_step(params: &ModelParams, grads: &Gradients, lr: f64) -> Result<ModelParams> {
    if !(lr >= 0.0) {
        return Err(invalid_param(format!("learning rate must be >= 0, got {lr}")));
    }
    let mut next = params.clone();
    next.sgd_step_in_place(grads, lr)?;
    Ok(next)
}

const CHECKPOINT_FORMAT: &str = "fedlsr-params";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format: String,
    version: u32,
    layers: Vec<LayerShape>,
    num_params: usize,
}

/// Writes a checkpoint: one line of JSON header, then the parameters as
/// little-endian `f64`.
pub fn write_checkpoint(params: &ModelParams, mut out: impl Write) -> Result<()> {
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        layers: params.layers.clone(),
        num_params: params.num_params(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for v in &params.flat {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint(input: impl Read) -> Result<ModelParams> {
    let mut reader = BufReader::new(input);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    let bad = |msg: String| Error::Format {
        path: "<checkpoint>".into(),
        msg,
    };
    let header: CheckpointHeader = serde_json::from_slice(&line)
        .map_err(|e| bad(format!("bad checkpoint header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported checkpoint {} v{}",
            header.format, header.version
        )));
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * header.num_params {
        return Err(bad(format!(
            "expected {} parameter bytes, found {}",
            8 * header.num_params,
            bytes.len()
        )));
    }
    let flat = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ModelParams::from_flat(header.layers, flat)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    read_checkpoint(std::fs::File::open(path)?)
}
