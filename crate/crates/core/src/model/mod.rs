//! Network representation: dimensions, dense weights, and per-unit normalization buffers.
//!
//! Layers are numbered `1..=L` as in the usual notation; `W_l` maps the `d[l-1]` units of layer
//! `l-1` into the `d[l]` units of layer `l` and is stored as `weights[l - 1]`. Column `j` of
//! `W_l` is the fan-in of unit `j`, row `i` of `W_{l+1}` the fan-out of unit `i`.

mod backward;
mod forward;
pub mod gradcheck;
pub mod norm;

pub use backward::{backward, AffineGrad, Gradients};
pub(crate) use forward::loss_sum_and_errors;
pub use forward::{forward, loss_and_error, ForwardCache, LayerCache, Mode};
pub use gradcheck::numeric_gradient;
pub use norm::{capnorm_backward, capnorm_forward, NormStats};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// How hidden pre-activations are normalized before the ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// `(z - mean) / max(std, 1)` with no free parameters.
    CapNorm,
    /// Ordinary batch normalization, optionally followed by a trainable shift and scale.
    BatchNorm {
        affine: bool,
    },
    None,
}

impl NormMode {
    pub fn is_affine(self) -> bool {
        matches!(self, NormMode::BatchNorm { affine: true })
    }
}

/// Variance floor used by plain batch normalization.
pub const BATCHNORM_EPS: f64 = 1e-5;

/// Mixing rate of the running normalization statistics used in eval mode.
pub const DEFAULT_STATS_MOMENTUM: f64 = 0.01;

/// Fixed architecture choices. Hidden widths are not part of this; they live in [`NetworkParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    pub norm: NormMode,
}

impl ModelConfig {
    pub fn new(num_layers: usize, input_dim: usize, output_dim: usize, norm: NormMode) -> Result<Self> {
        if num_layers < 1 || input_dim < 1 || output_dim < 1 {
            return Err(Error::InvalidArgument(format!(
                "need L >= 1, d0 >= 1, dL >= 1 (got L={num_layers}, d0={input_dim}, dL={output_dim})"
            )));
        }
        Ok(ModelConfig {
            num_layers,
            input_dim,
            output_dim,
            norm,
        })
    }
}

/// Trainable shift and scale applied after batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Per-hidden-layer buffers owned by the normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormBuffers {
    pub running_mean: Array1<f64>,
    pub running_scale: Array1<f64>,
    pub affine: Option<Affine>,
}

impl NormBuffers {
    fn new(width: usize, affine: bool) -> Self {
        NormBuffers {
            running_mean: Array1::zeros(width),
            running_scale: Array1::ones(width),
            affine: affine.then(|| Affine {
                gamma: Array1::ones(width),
                beta: Array1::zeros(width),
            }),
        }
    }

    fn push_unit(&mut self) {
        linalg::push_elem(&mut self.running_mean, 0.0);
        linalg::push_elem(&mut self.running_scale, 1.0);
        if let Some(a) = &mut self.affine {
            linalg::push_elem(&mut a.gamma, 1.0);
            linalg::push_elem(&mut a.beta, 0.0);
        }
    }

    fn remove_unit(&mut self, j: usize) {
        linalg::remove_elem(&mut self.running_mean, j);
        linalg::remove_elem(&mut self.running_scale, j);
        if let Some(a) = &mut self.affine {
            linalg::remove_elem(&mut a.gamma, j);
            linalg::remove_elem(&mut a.beta, j);
        }
    }
}

/// The pair `(d, W)` plus normalization buffers for each hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    dims: Vec<usize>,
    weights: Vec<Array2<f64>>,
    norm: Vec<NormBuffers>,
}

impl NetworkParams {
    /// Random initialization: every entry of `W_l` is drawn from a normal with standard deviation
    /// `1/sqrt(d[l-1])`, so each fan-in has expected squared length 1.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let dims = Self::check_dims(config, hidden)?;
        let weights = (1..dims.len())
            .map(|l| {
                let mut w = Array2::zeros((dims[l - 1], dims[l]));
                fill_fan_in_init(&mut w, rng);
                w
            })
            .collect();
        Ok(Self::assemble(config, dims, weights))
    }

    pub fn zeros(config: &ModelConfig, hidden: &[usize]) -> Result<Self> {
        let dims = Self::check_dims(config, hidden)?;
        let weights = (1..dims.len()).map(|l| Array2::zeros((dims[l - 1], dims[l]))).collect();
        Ok(Self::assemble(config, dims, weights))
    }

    /// Builds parameters from explicit weight matrices; dimensions are read off the shapes.
    pub fn from_weights(config: &ModelConfig, weights: Vec<Array2<f64>>) -> Result<Self> {
        if weights.len() != config.num_layers {
            return Err(Error::shape(format!(
                "expected {} weight matrices, got {}",
                config.num_layers,
                weights.len()
            )));
        }
        let mut dims = vec![config.input_dim];
        for (k, w) in weights.iter().enumerate() {
            if w.nrows() != dims[k] {
                return Err(Error::shape(format!(
                    "W_{} has {} rows, expected {}",
                    k + 1,
                    w.nrows(),
                    dims[k]
                )));
            }
            dims.push(w.ncols());
        }
        if dims[config.num_layers] != config.output_dim {
            return Err(Error::shape(format!(
                "output width {} != {}",
                dims[config.num_layers], config.output_dim
            )));
        }
        Ok(Self::assemble(config, dims, weights))
    }

    fn check_dims(config: &ModelConfig, hidden: &[usize]) -> Result<Vec<usize>> {
        if hidden.len() + 1 != config.num_layers {
            return Err(Error::shape(format!(
                "{} hidden widths given for L = {}",
                hidden.len(),
                config.num_layers
            )));
        }
        let mut dims = Vec::with_capacity(config.num_layers + 1);
        dims.push(config.input_dim);
        dims.extend_from_slice(hidden);
        dims.push(config.output_dim);
        Ok(dims)
    }

    fn assemble(config: &ModelConfig, dims: Vec<usize>, weights: Vec<Array2<f64>>) -> Self {
        let norm = dims[1..dims.len() - 1]
            .iter()
            .map(|&w| NormBuffers::new(w, config.norm.is_affine()))
            .collect();
        NetworkParams { dims, weights, norm }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    /// `W_l` for `1 <= l <= L`.
    pub fn weight(&self, l: usize) -> &Array2<f64> {
        &self.weights[l - 1]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut Array2<f64> {
        &mut self.weights[l - 1]
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    /// Normalization buffers of hidden layer `l` (`1 <= l <= L-1`).
    pub fn norm_buffers(&self, l: usize) -> &NormBuffers {
        &self.norm[l - 1]
    }

    pub fn norm_buffers_mut(&mut self, l: usize) -> &mut NormBuffers {
        &mut self.norm[l - 1]
    }

    pub fn num_weights(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    pub fn is_hidden(&self, l: usize) -> bool {
        l >= 1 && l < self.num_layers()
    }

    pub(crate) fn check_hidden(&self, l: usize) -> Result<()> {
        if self.is_hidden(l) {
            Ok(())
        } else {
            Err(Error::NotHiddenLayer {
                layer: l,
                max: self.num_layers().saturating_sub(1),
            })
        }
    }

    /// Checks that `d` and every matrix and buffer agree.
    pub fn check_consistency(&self) -> Result<()> {
        if self.dims.len() != self.weights.len() + 1 || self.norm.len() + 1 != self.weights.len() {
            return Err(Error::shape("layer count drift"));
        }
        for (k, w) in self.weights.iter().enumerate() {
            if w.dim() != (self.dims[k], self.dims[k + 1]) {
                return Err(Error::shape(format!(
                    "W_{} is {:?}, dims say ({}, {})",
                    k + 1,
                    w.dim(),
                    self.dims[k],
                    self.dims[k + 1]
                )));
            }
        }
        for (k, b) in self.norm.iter().enumerate() {
            let width = self.dims[k + 1];
            let affine_ok = b
                .affine
                .as_ref()
                .is_none_or(|a| a.gamma.len() == width && a.beta.len() == width);
            if b.running_mean.len() != width || b.running_scale.len() != width || !affine_ok {
                return Err(Error::shape(format!(
                    "normalization buffers of layer {} drifted",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Appends a unit with the given fan-in and a zero fan-out to hidden layer `l`.
    pub(crate) fn push_unit(&mut self, l: usize, fan_in: ndarray::ArrayView1<f64>) {
        linalg::push_column(&mut self.weights[l - 1], fan_in);
        let fan_out = Array1::zeros(self.dims[l + 1]);
        linalg::push_row(&mut self.weights[l], fan_out.view());
        self.norm[l - 1].push_unit();
        self.dims[l] += 1;
    }

    pub(crate) fn remove_unit(&mut self, l: usize, j: usize) {
        linalg::remove_column(&mut self.weights[l - 1], j);
        linalg::remove_row(&mut self.weights[l], j);
        self.norm[l - 1].remove_unit(j);
        self.dims[l] -= 1;
    }

    /// Folds the batch statistics of a train-mode forward pass into the running estimates.
    pub fn update_running_stats(&mut self, cache: &ForwardCache, momentum: f64) {
        for (buf, layer) in self.norm.iter_mut().zip(&cache.layers) {
            if let Some(stats) = &layer.stats {
                buf.running_mean
                    .zip_mut_with(&stats.mean, |r, &m| *r = (1.0 - momentum) * *r + momentum * m);
                buf.running_scale
                    .zip_mut_with(&stats.scale, |r, &s| *r = (1.0 - momentum) * *r + momentum * s);
            }
        }
    }

    /// Overwrites the running estimates with the statistics of one train-mode pass, typically a
    /// pass over a whole dataset.
    pub fn set_running_stats(&mut self, cache: &ForwardCache) {
        self.update_running_stats(cache, 1.0);
    }
}

pub(crate) fn fill_fan_in_init<R: Rng + ?Sized>(w: &mut Array2<f64>, rng: &mut R) {
    let fan_in = w.nrows();
    if fan_in == 0 {
        return;
    }
    let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("finite std");
    w.mapv_inplace(|_| normal.sample(rng));
}

/// Draws a fresh fan-in of length `fan_in` with expected squared length 1.
pub fn sample_fan_in<R: Rng + ?Sized>(fan_in: usize, rng: &mut R) -> Array1<f64> {
    if fan_in == 0 {
        return Array1::zeros(0);
    }
    let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("finite std");
    Array1::from_iter((0..fan_in).map(|_| normal.sample(rng)))
}
