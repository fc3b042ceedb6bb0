//! Adaptive radial-angular gradient descent.
//!
//! Each fan-in gradient is split into a radial part (along the fan-in) and an angular part
//! (orthogonal to it). The radial part and the ℓ2 shrinkage are applied unnormalized, so the time
//! a unit needs to be shrunk to zero is controlled by `alpha_r · lambda` alone. The angular part is
//! normalized by a per-unit running average of its squared length, relative to the largest such
//! average seen so far, and applied as a rotation that does not change the fan-in length.

use ndarray::{ArrayView1, ArrayViewMut1};
use rand::Rng;

use super::geometry::{decompose_radial_angular, rotate_in_place};
use super::{AdaRadHyper, StepReport, UnitEvent, UnitEventKind};
use crate::error::{Error, Result};
use crate::model::{Gradients, NetworkParams};
use crate::regularization::shrink_in_place;
use crate::topology::{self, UnitState};

/// Per-unit running averages for every layer (index `l - 1`) and the global maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaRadState {
    /// Quadratic running average of ‖φ‖².
    pub phi_bar: Vec<Vec<f64>>,
    /// Capacity of `phi_bar`: the running average of the constant 1, which debiases it.
    pub capacity: Vec<Vec<f64>>,
    pub phi_max: f64,
    pub c_max: f64,
}

impl AdaRadState {
    pub fn new(params: &NetworkParams) -> Self {
        let widths = &params.dims()[1..];
        AdaRadState {
            phi_bar: widths.iter().map(|&w| vec![0.0; w]).collect(),
            capacity: widths.iter().map(|&w| vec![0.0; w]).collect(),
            phi_max: 0.0,
            c_max: 0.0,
        }
    }

    pub fn check(&self, params: &NetworkParams) -> Result<()> {
        let widths = &params.dims()[1..];
        let ok = self.phi_bar.len() == widths.len()
            && self.capacity.len() == widths.len()
            && widths
                .iter()
                .enumerate()
                .all(|(k, &w)| self.phi_bar[k].len() == w && self.capacity[k].len() == w);
        if ok {
            Ok(())
        } else {
            Err(Error::shape("AdaRad state does not track the layer widths"))
        }
    }

    /// Updates the running averages of unit `j` in layer `l` with `‖φ‖²` and returns the factor
    /// that normalizes its angular step.
    pub(crate) fn observe(&mut self, l: usize, j: usize, phi_sq: f64, beta: f64, epsilon: f64) -> f64 {
        let pb = &mut self.phi_bar[l - 1][j];
        let c = &mut self.capacity[l - 1][j];
        *pb = (1.0 - beta) * *pb + beta * phi_sq;
        *c = (1.0 - beta) * *c + beta;
        self.phi_max = self.phi_max.max(*pb);
        self.c_max = self.c_max.max(*c);
        (self.phi_max / self.c_max).sqrt() / ((*pb / *c).sqrt() + epsilon)
    }
}

impl UnitState for AdaRadState {
    fn push_unit(&mut self, layer: usize, _: &[usize]) {
        self.phi_bar[layer - 1].push(0.0);
        self.capacity[layer - 1].push(0.0);
    }

    fn remove_unit(&mut self, layer: usize, index: usize) {
        self.phi_bar[layer - 1].remove(index);
        self.capacity[layer - 1].remove(index);
    }
}

fn is_zero(v: ArrayView1<f64>) -> bool {
    v.iter().all(|&x| x == 0.0)
}

/// Radial move, rotation by `angle` towards `direction`, then shrinkage. Returns whether the
/// fan-in ended up exactly zero.
pub(crate) fn move_fan_in(
    mut w: ArrayViewMut1<f64>,
    radial: ArrayView1<f64>,
    direction: Option<ArrayView1<f64>>,
    angle: f64,
    alpha_r: f64,
    shrink_amount: f64,
) -> Result<bool> {
    w.scaled_add(-alpha_r, &radial);
    if let Some(d) = direction {
        rotate_in_place(w.view_mut(), d, angle)?;
    }
    shrink_in_place(w.view_mut(), shrink_amount);
    Ok(is_zero(w.view()))
}

/// Adds `nu` units to every hidden layer when `t` is a multiple of `nu_freq`.
pub(crate) fn maybe_add_units<S: UnitState, R: Rng + ?Sized>(
    params: &mut NetworkParams,
    state: &mut S,
    l: usize,
    hyper: &AdaRadHyper,
    t: u64,
    rng: &mut R,
    report: &mut StepReport,
) -> Result<()> {
    if l < params.num_layers() && hyper.nu > 0 && t.is_multiple_of(hyper.nu_freq) {
        for _ in 0..hyper.nu {
            let index = topology::add_unit(params, state, l, rng)?;
            report.events.push(UnitEvent {
                layer: l,
                index,
                kind: UnitEventKind::Added,
            });
        }
    }
    Ok(())
}

/// One AdaRad iteration. `grads` must hold the loss gradient scaled by `batch_fraction`
/// (`|batch| / |D|`), which also scales the shrinkage `alpha_r · lambda · batch_fraction`.
/// Layers are visited from the output down and units from the last to the first; hidden units
/// whose fan-in reaches zero are removed on the spot.
pub fn adarad_step<R: Rng + ?Sized>(
    params: &mut NetworkParams,
    state: &mut AdaRadState,
    grads: &Gradients,
    hyper: &AdaRadHyper,
    batch_fraction: f64,
    t: u64,
    rng: &mut R,
) -> Result<StepReport> {
    grads.check_congruent(params)?;
    state.check(params)?;
    let shrink_amount = hyper.alpha_r * hyper.lambda * batch_fraction;
    let num_layers = params.num_layers();
    let mut report = StepReport::default();
    for l in (1..=num_layers).rev() {
        let g = grads.weight(l);
        for j in (0..g.ncols()).rev() {
            let w = params.weight_mut(l).column_mut(j);
            let (radial, phi) = decompose_radial_angular(w.view(), g.column(j));
            let phi_sq = phi.dot(&phi);
            let factor = state.observe(l, j, phi_sq, hyper.beta_quad, hyper.epsilon);
            let adj_norm = factor * phi_sq.sqrt();
            let direction = (adj_norm > 0.0).then(|| -&phi / phi_sq.sqrt());
            let zero = move_fan_in(
                w,
                radial.view(),
                direction.as_ref().map(|d| d.view()),
                hyper.alpha_phi * adj_norm,
                hyper.alpha_r,
                shrink_amount,
            )?;
            if zero && l < num_layers {
                topology::remove_unit(params, state, l, j)?;
                report.events.push(UnitEvent {
                    layer: l,
                    index: j,
                    kind: UnitEventKind::Removed,
                });
            }
        }
        maybe_add_units(params, state, l, hyper, t, rng, &mut report)?;
    }
    Ok(report)
}
