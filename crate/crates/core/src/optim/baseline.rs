//! Parametric baselines: SGD with optional ℓ2 fan-in shrinkage, and RMSprop.

use ndarray::{Array1, Array2, ArrayViewMut1, Zip};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Affine, AffineGrad, Gradients, NetworkParams};
use crate::regularization::shrink_in_place;
use crate::topology::UnitState;

fn check_affine(params: &NetworkParams, grads: &Gradients) -> Result<()> {
    let hidden = params.num_layers() - 1;
    if grads.affine.len() != hidden
        && !(grads.affine.is_empty() && (1..=hidden).all(|l| params.norm_buffers(l).affine.is_none()))
    {
        return Err(Error::shape("affine gradients do not match the hidden layers"));
    }
    for l in 1..=hidden {
        let p = params.norm_buffers(l).affine.as_ref();
        let g = grads.affine.get(l - 1).and_then(Option::as_ref);
        match (p, g) {
            (None, None) => {}
            (Some(a), Some(ga)) if a.gamma.len() == ga.gamma.len() && a.beta.len() == ga.beta.len() => {}
            _ => return Err(Error::shape(format!("affine gradient of layer {l} does not match"))),
        }
    }
    Ok(())
}

/// `W ← W − α·G`, then, if `shrink_amount > 0`, every fan-in is shrunk towards zero by that
/// length. Affine normalization parameters take plain gradient steps.
pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, alpha: f64, shrink_amount: f64) -> Result<()> {
    grads.check_congruent(params)?;
    check_affine(params, grads)?;
    for (w, g) in params.weights_mut().iter_mut().zip(&grads.weights) {
        w.scaled_add(-alpha, g);
        if shrink_amount > 0.0 {
            for col in w.columns_mut() {
                shrink_in_place(col, shrink_amount);
            }
        }
    }
    for l in 1..params.num_layers() {
        if let (Some(a), Some(ga)) = (params.norm_buffers_mut(l).affine.as_mut(), grads.affine[l - 1].as_ref()) {
            a.gamma.scaled_add(-alpha, &ga.gamma);
            a.beta.scaled_add(-alpha, &ga.beta);
        }
    }
    Ok(())
}

/// Squared-gradient caches for RMSprop, one entry per trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub beta: f64,
    pub epsilon: f64,
    /// Per weight, shaped like `W_l` (index `l - 1`).
    pub cache: Vec<Array2<f64>>,
    /// Per hidden layer `(gamma, beta)` caches for affine batch normalization.
    pub affine_cache: Vec<Option<(Array1<f64>, Array1<f64>)>>,
    /// Running average of the constant 1, used to debias the caches early on.
    pub capacity: f64,
}

impl RmsPropState {
    pub fn new(params: &NetworkParams, beta: f64, epsilon: f64) -> Self {
        RmsPropState {
            beta,
            epsilon,
            cache: params.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            affine_cache: (1..params.num_layers())
                .map(|l| {
                    params
                        .norm_buffers(l)
                        .affine
                        .as_ref()
                        .map(|a| (Array1::zeros(a.gamma.len()), Array1::zeros(a.beta.len())))
                })
                .collect(),
            capacity: 0.0,
        }
    }

    pub fn check(&self, params: &NetworkParams) -> Result<()> {
        let ok = self.cache.len() == params.num_layers()
            && self.cache.iter().zip(params.weights()).all(|(c, w)| c.dim() == w.dim())
            && self.affine_cache.len() + 1 == params.num_layers()
            && self
                .affine_cache
                .iter()
                .enumerate()
                .all(|(k, c)| match (c, &params.norm_buffers(k + 1).affine) {
                    (None, None) => true,
                    (Some((g, b)), Some(a)) => g.len() == a.gamma.len() && b.len() == a.beta.len(),
                    _ => false,
                });
        if ok {
            Ok(())
        } else {
            Err(Error::shape("RMSprop cache does not match the parameters"))
        }
    }
}

impl UnitState for RmsPropState {
    fn push_unit(&mut self, layer: usize, dims: &[usize]) {
        linalg::push_column(&mut self.cache[layer - 1], Array1::zeros(dims[layer - 1]).view());
        linalg::push_row(&mut self.cache[layer], Array1::zeros(dims[layer + 1]).view());
        if let Some((g, b)) = &mut self.affine_cache[layer - 1] {
            linalg::push_elem(g, 0.0);
            linalg::push_elem(b, 0.0);
        }
    }

    fn remove_unit(&mut self, layer: usize, index: usize) {
        linalg::remove_column(&mut self.cache[layer - 1], index);
        linalg::remove_row(&mut self.cache[layer], index);
        if let Some((g, b)) = &mut self.affine_cache[layer - 1] {
            linalg::remove_elem(g, index);
            linalg::remove_elem(b, index);
        }
    }
}

fn rms_update<'a>(
    w: impl Into<ArrayViewMut1<'a, f64>>,
    cache: impl Into<ArrayViewMut1<'a, f64>>,
    g: &Array1<f64>,
    alpha: f64,
    beta: f64,
    capacity: f64,
    epsilon: f64,
) {
    Zip::from(w.into()).and(cache.into()).and(g).for_each(|w, c, &g| {
        *c = (1.0 - beta) * *c + beta * g * g;
        *w -= alpha * g / ((*c / capacity).sqrt() + epsilon);
    });
}

/// One RMSprop step: every parameter moves by `α·g / (√(v/c) + ε)`, where `v` is the running
/// average of its squared gradient and `c` the matching running average of 1.
pub fn rmsprop_step(params: &mut NetworkParams, state: &mut RmsPropState, grads: &Gradients, alpha: f64) -> Result<()> {
    grads.check_congruent(params)?;
    check_affine(params, grads)?;
    state.check(params)?;
    let (beta, eps) = (state.beta, state.epsilon);
    state.capacity = (1.0 - beta) * state.capacity + beta;
    let capacity = state.capacity;
    for ((w, c), g) in params
        .weights_mut()
        .iter_mut()
        .zip(&mut state.cache)
        .zip(&grads.weights)
    {
        Zip::from(w).and(c).and(g).for_each(|w, c, &g| {
            *c = (1.0 - beta) * *c + beta * g * g;
            *w -= alpha * g / ((*c / capacity).sqrt() + eps);
        });
    }
    for l in 1..params.num_layers() {
        let Some(Affine { gamma, beta: shift }) = params.norm_buffers_mut(l).affine.as_mut() else {
            continue;
        };
        let (Some((cg, cb)), Some(AffineGrad { gamma: gg, beta: gb })) =
            (state.affine_cache[l - 1].as_mut(), grads.affine[l - 1].as_ref())
        else {
            continue;
        };
        rms_update(gamma, cg, gg, alpha, beta, capacity, eps);
        rms_update(shift, cb, gb, alpha, beta, capacity, eps);
    }
    Ok(())
}
