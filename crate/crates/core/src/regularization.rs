//! Fan-in / fan-out group penalties, the full training objective, and the ℓ2 group shrinkage
//! operator.

use ndarray::{Array1, ArrayView1, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward, loss_and_error, Mode, ModelConfig, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One group per column of `W_l`: the incoming weights of a unit.
    FanIn,
    /// One group per row of `W_l`: the outgoing weights of a unit.
    FanOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub lambda: f64,
    pub p: u8,
    pub grouping: Grouping,
}

impl RegConfig {
    pub fn fan_in(lambda: f64) -> Self {
        RegConfig {
            lambda,
            p: 2,
            grouping: Grouping::FanIn,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::config("lambda", format!("must be >= 0, got {}", self.lambda)));
        }
        if self.p != 1 && self.p != 2 {
            return Err(Error::config("p", format!("must be 1 or 2, got {}", self.p)));
        }
        Ok(())
    }
}

fn p_norm(v: ArrayView1<f64>, p: u8) -> f64 {
    match p {
        1 => v.fold(0.0, |acc, x| acc + x.abs()),
        _ => v.dot(&v).sqrt(),
    }
}

fn layer_penalty(w: &ndarray::Array2<f64>, p: u8, grouping: Grouping) -> f64 {
    let axis = match grouping {
        Grouping::FanIn => Axis(1),
        Grouping::FanOut => Axis(0),
    };
    w.axis_iter(axis).map(|g| p_norm(g, p)).sum()
}

/// `λ · Σ_l Σ_groups ‖group‖_p`. Normalization parameters are never penalized.
pub fn omega(params: &NetworkParams, reg: &RegConfig) -> Result<f64> {
    reg.validate()?;
    Ok(reg.lambda
        * params
            .weights()
            .iter()
            .map(|w| layer_penalty(w, reg.p, reg.grouping))
            .sum::<f64>())
}

/// The penalty with a separate strength `lambdas[l-1]` for each layer `l`.
pub fn omega_per_layer(params: &NetworkParams, lambdas: &[f64], p: u8, grouping: Grouping) -> Result<f64> {
    if lambdas.len() != params.num_layers() {
        return Err(Error::shape(format!(
            "{} per-layer strengths for {} layers",
            lambdas.len(),
            params.num_layers()
        )));
    }
    Ok(params
        .weights()
        .iter()
        .zip(lambdas)
        .map(|(w, &lambda)| lambda * layer_penalty(w, p, grouping))
        .sum())
}

/// Mean cross-entropy over the whole dataset plus the penalty. Normalization statistics come from
/// a single pass over the full dataset.
pub fn objective(params: &NetworkParams, config: &ModelConfig, reg: &RegConfig, dataset: &Dataset) -> Result<f64> {
    Ok(mean_loss(params, config, dataset)? + omega(params, reg)?)
}

/// The loss term of [`objective`].
pub fn mean_loss(params: &NetworkParams, config: &ModelConfig, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("objective of an empty dataset".into()));
    }
    let mode = if dataset.len() >= 2 { Mode::Train } else { Mode::Eval };
    let cache = forward(params, config, dataset.features(), mode)?;
    Ok(loss_and_error(&cache, dataset.labels())?.0)
}

/// ℓ2 group shrinkage: the vector shortened by `amount`, or zero if it is not longer than that.
pub fn shrink(v: ArrayView1<f64>, amount: f64) -> Array1<f64> {
    let mut out = v.to_owned();
    shrink_in_place(out.view_mut(), amount);
    out
}

/// In-place [`shrink`]. Returns true when the vector was set to exactly zero.
pub fn shrink_in_place(mut v: ArrayViewMut1<f64>, amount: f64) -> bool {
    debug_assert!(amount >= 0.0);
    if amount == 0.0 {
        return v.iter().all(|&x| x == 0.0);
    }
    let norm = v.dot(&v).sqrt();
    if norm <= amount {
        v.fill(0.0);
        true
    } else {
        v *= 1.0 - amount / norm;
        false
    }
}
