//! Optimizers: AdaRad and AdaRad-M for nonparametric training, SGD and RMSprop baselines.

mod adarad;
mod adaradm;
mod baseline;
pub mod geometry;

pub use adarad::{adarad_step, AdaRadState};
pub use adaradm::{adaradm_step, AdaRadMState};
pub use baseline::{rmsprop_step, sgd_step, RmsPropState};
pub use geometry::{decompose_radial_angular, rotate};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkParams;
use crate::topology::UnitState;

/// Hyperparameters shared by AdaRad and AdaRad-M. AdaRad's single mixing rate is `beta_quad`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaRadHyper {
    /// Radial step size; also scales the shrinkage.
    pub alpha_r: f64,
    /// Angular step size.
    pub alpha_phi: f64,
    pub lambda: f64,
    pub beta_quad: f64,
    /// AdaRad-M only.
    pub beta_arith: f64,
    pub epsilon: f64,
    /// Units added to each hidden layer whenever the step counter is a multiple of `nu_freq`.
    pub nu: usize,
    pub nu_freq: u64,
}

impl AdaRadHyper {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| if ok { Ok(()) } else { Err(Error::config(field, msg)) };
        check(
            self.alpha_r >= 0.0 && self.alpha_r.is_finite(),
            "alpha_r",
            "must be finite and >= 0",
        )?;
        check(
            self.alpha_phi >= 0.0 && self.alpha_phi.is_finite(),
            "alpha_phi",
            "must be finite and >= 0",
        )?;
        check(self.lambda >= 0.0, "lambda", "must be >= 0")?;
        check(
            self.beta_quad > 0.0 && self.beta_quad <= 1.0,
            "beta_quad",
            "must be in (0, 1]",
        )?;
        check(
            self.beta_arith > 0.0 && self.beta_arith <= 1.0,
            "beta_arith",
            "must be in (0, 1]",
        )?;
        check(self.epsilon > 0.0, "epsilon", "must be > 0")?;
        check(self.nu_freq >= 1, "nu_freq", "must be >= 1")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitEventKind {
    Added,
    Removed,
}

/// A unit added or removed during a step. `index` is the unit's position at the time of the event,
/// so replaying events in order reproduces the layer layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitEvent {
    pub layer: usize,
    pub index: usize,
    pub kind: UnitEventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepReport {
    pub events: Vec<UnitEvent>,
}

impl StepReport {
    pub fn removed(&self) -> usize {
        self.events.iter().filter(|e| e.kind == UnitEventKind::Removed).count()
    }

    pub fn added(&self) -> usize {
        self.events.iter().filter(|e| e.kind == UnitEventKind::Added).count()
    }

    /// Replays the events on some other per-unit state, e.g. a [`crate::topology::UnitLedger`].
    pub fn replay<S: UnitState + ?Sized>(&self, dims_before: &[usize], state: &mut S) {
        let mut dims = dims_before.to_vec();
        for e in &self.events {
            match e.kind {
                UnitEventKind::Added => {
                    state.push_unit(e.layer, &dims);
                    dims[e.layer] += 1;
                }
                UnitEventKind::Removed => {
                    state.remove_unit(e.layer, e.index);
                    dims[e.layer] -= 1;
                }
            }
        }
    }
}

/// Optimizer state of any supported algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    AdaRad(AdaRadState),
    AdaRadM(AdaRadMState),
    Sgd,
    RmsProp(RmsPropState),
}

impl OptimizerState {
    pub fn check(&self, params: &NetworkParams) -> Result<()> {
        match self {
            OptimizerState::AdaRad(s) => s.check(params),
            OptimizerState::AdaRadM(s) => s.check(params),
            OptimizerState::Sgd => Ok(()),
            OptimizerState::RmsProp(s) => s.check(params),
        }
    }
}

impl UnitState for OptimizerState {
    fn push_unit(&mut self, layer: usize, dims: &[usize]) {
        match self {
            OptimizerState::AdaRad(s) => s.push_unit(layer, dims),
            OptimizerState::AdaRadM(s) => s.push_unit(layer, dims),
            OptimizerState::Sgd => {}
            OptimizerState::RmsProp(s) => s.push_unit(layer, dims),
        }
    }

    fn remove_unit(&mut self, layer: usize, index: usize) {
        match self {
            OptimizerState::AdaRad(s) => s.remove_unit(layer, index),
            OptimizerState::AdaRadM(s) => s.remove_unit(layer, index),
            OptimizerState::Sgd => {}
            OptimizerState::RmsProp(s) => s.remove_unit(layer, index),
        }
    }
}
