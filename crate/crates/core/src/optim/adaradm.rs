//! AdaRad with momentum on the angular component.
//!
//! The angular step follows an arithmetic running average `φ̃` of past orthogonal components.
//! `φ̃` is kept orthogonal to its fan-in: whenever the fan-in is rotated, `φ̃` is rotated by the
//! same angle in the same plane, and rows dropped from `W_{l+1}` by removals in layer `l` are
//! repaired with a Gram–Schmidt step.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::adarad::{maybe_add_units, AdaRadState};
use super::geometry::{decompose_radial_angular, rotate_in_place};
use super::{AdaRadHyper, StepReport, UnitEvent, UnitEventKind};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Gradients, NetworkParams};
use crate::regularization::shrink_in_place;
use crate::topology::{self, UnitState};

#[derive(Debug, Clone, PartialEq)]
pub struct AdaRadMState {
    /// Quadratic statistics, mixed with `beta_quad`.
    pub base: AdaRadState,
    /// Arithmetic running average of the angular components, shaped like `W_l` (index `l - 1`).
    pub phi_tilde: Vec<Array2<f64>>,
    /// Capacity of `phi_tilde`, per unit.
    pub arith_capacity: Vec<Vec<f64>>,
    /// Layers (index `l - 1`) whose `phi_tilde` lost rows since the last re-orthogonalization.
    pub needs_ortho: Vec<bool>,
}

impl AdaRadMState {
    pub fn new(params: &NetworkParams) -> Self {
        AdaRadMState {
            base: AdaRadState::new(params),
            phi_tilde: params.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            arith_capacity: params.dims()[1..].iter().map(|&w| vec![0.0; w]).collect(),
            needs_ortho: vec![false; params.num_layers()],
        }
    }

    pub fn check(&self, params: &NetworkParams) -> Result<()> {
        self.base.check(params)?;
        let ok = self.phi_tilde.len() == params.num_layers()
            && self.needs_ortho.len() == params.num_layers()
            && self.arith_capacity.len() == params.num_layers()
            && self
                .phi_tilde
                .iter()
                .zip(params.weights())
                .all(|(p, w)| p.dim() == w.dim())
            && self
                .arith_capacity
                .iter()
                .zip(params.weights())
                .all(|(a, w)| a.len() == w.ncols());
        if ok {
            Ok(())
        } else {
            Err(Error::shape("AdaRad-M state does not track the layer widths"))
        }
    }

    /// Largest `|⟨φ̃, w⟩| / (‖φ̃‖ ‖w‖)` over all columns with nonzero `φ̃` and `w`.
    pub fn max_misalignment(&self, params: &NetworkParams) -> f64 {
        let mut worst: f64 = 0.0;
        for (p, w) in self.phi_tilde.iter().zip(params.weights()) {
            for (pc, wc) in p.columns().into_iter().zip(w.columns()) {
                let scale = pc.dot(&pc).sqrt() * wc.dot(&wc).sqrt();
                if scale > 0.0 {
                    worst = worst.max(pc.dot(&wc).abs() / scale);
                }
            }
        }
        worst
    }

    /// Gram–Schmidt step for every flagged layer: removes from each `φ̃` column its component
    /// along the matching fan-in. Zero fan-ins are skipped.
    pub fn reorthogonalize_pending(&mut self, params: &NetworkParams) {
        for k in 0..self.needs_ortho.len() {
            if std::mem::take(&mut self.needs_ortho[k]) {
                reorthogonalize(&mut self.phi_tilde[k], &params.weights()[k]);
            }
        }
    }
}

fn reorthogonalize(phi_tilde: &mut Array2<f64>, w: &Array2<f64>) {
    for (mut p, wc) in phi_tilde.columns_mut().into_iter().zip(w.columns()) {
        let ww = wc.dot(&wc);
        if ww > 0.0 {
            // Two passes: the first leaves a residue of the order of the rounding error.
            for _ in 0..2 {
                let c = p.dot(&wc) / ww;
                p.scaled_add(-c, &wc);
            }
        }
    }
}

impl UnitState for AdaRadMState {
    fn push_unit(&mut self, layer: usize, dims: &[usize]) {
        self.base.push_unit(layer, dims);
        linalg::push_column(&mut self.phi_tilde[layer - 1], Array1::zeros(dims[layer - 1]).view());
        linalg::push_row(&mut self.phi_tilde[layer], Array1::zeros(dims[layer + 1]).view());
        self.arith_capacity[layer - 1].push(0.0);
    }

    fn remove_unit(&mut self, layer: usize, index: usize) {
        self.base.remove_unit(layer, index);
        linalg::remove_column(&mut self.phi_tilde[layer - 1], index);
        linalg::remove_row(&mut self.phi_tilde[layer], index);
        self.arith_capacity[layer - 1].remove(index);
        self.needs_ortho[layer] = true;
    }
}

/// One AdaRad-M iteration; see [`super::adarad_step`] for the shared conventions.
pub fn adaradm_step<R: Rng + ?Sized>(
    params: &mut NetworkParams,
    state: &mut AdaRadMState,
    grads: &Gradients,
    hyper: &AdaRadHyper,
    batch_fraction: f64,
    t: u64,
    rng: &mut R,
) -> Result<StepReport> {
    grads.check_congruent(params)?;
    state.check(params)?;
    state.reorthogonalize_pending(params);
    let shrink_amount = hyper.alpha_r * hyper.lambda * batch_fraction;
    let num_layers = params.num_layers();
    let beta = hyper.beta_arith;
    let mut report = StepReport::default();
    for l in (1..=num_layers).rev() {
        let g = grads.weight(l);
        for j in (0..g.ncols()).rev() {
            let w = params.weight_mut(l).column_mut(j);
            let (radial, phi) = decompose_radial_angular(w.view(), g.column(j));
            let phi_sq = phi.dot(&phi);
            let factor = state.base.observe(l, j, phi_sq, hyper.beta_quad, hyper.epsilon);
            let a = &mut state.arith_capacity[l - 1][j];
            *a = (1.0 - beta) * *a + beta;
            let a = *a;
            let mut pt = state.phi_tilde[l - 1].column_mut(j);
            pt *= 1.0 - beta;
            pt.scaled_add(beta, &phi);
            let pt_norm = pt.dot(&pt).sqrt();
            let adj_norm = factor * pt_norm / a;
            let angle = hyper.alpha_phi * adj_norm;
            // The fan-in turns away from φ̃ and φ̃ turns towards the old fan-in direction by the
            // same angle, in the same plane, so the two stay orthogonal.

            let mut w = w;
            w.scaled_add(-hyper.alpha_r, &radial);
            if adj_norm > 0.0 {
                let w_norm = w.dot(&w).sqrt();
                if w_norm > 0.0 {
                    let w_dir = &w / w_norm;
                    let direction = &pt * (-1.0 / pt_norm);
                    rotate_in_place(w.view_mut(), direction.view(), angle)?;
                    rotate_in_place(pt, w_dir.view(), angle)?;
                }
            }
            let zero = shrink_in_place(w, shrink_amount);
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
        state.reorthogonalize_pending(params);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, NormMode};
    use crate::optim::adarad_step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hyper(beta_arith: f64) -> AdaRadHyper {
        AdaRadHyper {
            alpha_r: 0.05,
            alpha_phi: 0.1,
            lambda: 0.5,
            beta_quad: 0.005,
            beta_arith,
            epsilon: 1e-8,
            nu: 1,
            nu_freq: 7,
        }
    }

    fn random_grads<R: Rng>(params: &NetworkParams, rng: &mut R) -> Gradients {
        Gradients {
            weights: params
                .weights()
                .iter()
                .map(|w| Array2::from_shape_fn(w.dim(), |_| rng.random_range(-1.0..1.0)))
                .collect(),
            affine: vec![None; params.num_layers() - 1],
        }
    }

    #[test]
    fn unit_arithmetic_mixing_matches_adarad() {
        let cfg = ModelConfig::new(3, 3, 2, NormMode::CapNorm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p0 = NetworkParams::init(&cfg, &[4, 3], &mut rng).unwrap();
        let (mut pa, mut pm) = (p0.clone(), p0);
        let mut sa = AdaRadState::new(&pa);
        let mut sm = AdaRadMState::new(&pm);
        let (mut ra, mut rm) = (ChaCha8Rng::seed_from_u64(9), ChaCha8Rng::seed_from_u64(9));
        let mut grng = ChaCha8Rng::seed_from_u64(2);
        for t in 1..=40 {
            let g = random_grads(&pa, &mut grng);
            let a = adarad_step(&mut pa, &mut sa, &g, &hyper(1.0), 0.3, t, &mut ra).unwrap();
            let m = adaradm_step(&mut pm, &mut sm, &g, &hyper(1.0), 0.3, t, &mut rm).unwrap();
            assert_eq!(a, m);
            assert_eq!(pa.dims(), pm.dims());
            for (x, y) in pa.weights().iter().zip(pm.weights()) {
                let diff = (x - y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(diff < 1e-12, "step {t}: {diff}");
            }
        }
    }

    #[test]
    fn momentum_stays_orthogonal() {
        let cfg = ModelConfig::new(3, 3, 2, NormMode::CapNorm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut p = NetworkParams::init(&cfg, &[4, 3], &mut rng).unwrap();
        let mut s = AdaRadMState::new(&p);
        for t in 1..=100 {
            let g = random_grads(&p, &mut rng);
            adaradm_step(&mut p, &mut s, &g, &hyper(0.1), 0.5, t, &mut rng).unwrap();
            s.check(&p).unwrap();
            assert!(s.max_misalignment(&p) < 1e-6);
        }
    }

    #[test]
    fn removal_is_followed_by_gram_schmidt() {
        let cfg = ModelConfig::new(3, 3, 2, NormMode::CapNorm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = NetworkParams::init(&cfg, &[4, 3], &mut rng).unwrap();
        let mut s = AdaRadMState::new(&p);
        for t in 1..=10 {
            let g = random_grads(&p, &mut rng);
            adaradm_step(&mut p, &mut s, &g, &hyper(0.1), 0.5, t, &mut rng).unwrap();
        }
        topology::remove_unit(&mut p, &mut s, 1, 0).unwrap();
        assert_eq!(s.needs_ortho, vec![false, true, false]);
        s.reorthogonalize_pending(&p);
        assert!(s.max_misalignment(&p) < 1e-10);
        assert_eq!(s.needs_ortho, vec![false; 3]);
    }
}
