//! Changing the number of hidden units without changing what the network computes.
//!
//! A unit whose fan-in or fan-out is zero contributes nothing to the output when its nonlinearity
//! maps 0 to 0, so such units can be inserted or deleted freely. New units get a random fan-in and
//! a zero fan-out.

use ndarray::ArrayView2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward, sample_fan_in, Mode, ModelConfig, NetworkParams};

/// Per-unit state that must follow the units of the network, e.g. optimizer statistics.
pub trait UnitState {
    /// Called before a unit is appended to hidden layer `layer`; `dims` are the dimensions before
    /// the change.
    fn push_unit(&mut self, layer: usize, dims: &[usize]);
    /// Called when unit `index` of hidden layer `layer` is deleted.
    fn remove_unit(&mut self, layer: usize, index: usize);
}

impl UnitState for () {
    fn push_unit(&mut self, _: usize, _: &[usize]) {}
    fn remove_unit(&mut self, _: usize, _: usize) {}
}

impl<A: UnitState, B: UnitState> UnitState for (A, B) {
    fn push_unit(&mut self, layer: usize, dims: &[usize]) {
        self.0.push_unit(layer, dims);
        self.1.push_unit(layer, dims);
    }
    fn remove_unit(&mut self, layer: usize, index: usize) {
        self.0.remove_unit(layer, index);
        self.1.remove_unit(layer, index);
    }
}

impl<S: UnitState + ?Sized> UnitState for &mut S {
    fn push_unit(&mut self, layer: usize, dims: &[usize]) {
        (**self).push_unit(layer, dims);
    }
    fn remove_unit(&mut self, layer: usize, index: usize) {
        (**self).remove_unit(layer, index);
    }
}

/// Appends a unit to hidden layer `l` with fan-in drawn from `N(0, 1/d[l-1])` entrywise and a zero
/// fan-out. Returns its index.
pub fn add_unit<S: UnitState + ?Sized, R: Rng + ?Sized>(
    params: &mut NetworkParams,
    state: &mut S,
    l: usize,
    rng: &mut R,
) -> Result<usize> {
    params.check_hidden(l)?;
    let fan_in = sample_fan_in(params.dims()[l - 1], rng);
    state.push_unit(l, params.dims());
    params.push_unit(l, fan_in.view());
    Ok(params.dims()[l] - 1)
}

/// Deletes unit `j` of hidden layer `l`: column `j` of `W_l`, row `j` of `W_{l+1}` and all state
/// attached to it.
pub fn remove_unit<S: UnitState + ?Sized>(params: &mut NetworkParams, state: &mut S, l: usize, j: usize) -> Result<()> {
    params.check_hidden(l)?;
    let width = params.dims()[l];
    if j >= width {
        return Err(Error::NoSuchUnit {
            layer: l,
            index: j,
            width,
        });
    }
    state.remove_unit(l, j);
    params.remove_unit(l, j);
    Ok(())
}

/// Hidden units whose fan-in is exactly zero, as `(layer, index)`.
pub fn find_zero_fanin_units(params: &NetworkParams) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for l in 1..params.num_layers() {
        for (j, col) in params.weight(l).columns().into_iter().enumerate() {
            if col.iter().all(|&v| v == 0.0) {
                out.push((l, j));
            }
        }
    }
    out
}

/// Dimensions after discarding every hidden unit with a zero fan-in or a zero fan-out.
pub fn proper_dimensionality(params: &NetworkParams) -> Vec<usize> {
    let mut dims = params.dims().to_vec();
    for l in 1..params.num_layers() {
        let w_in = params.weight(l);
        let w_out = params.weight(l + 1);
        dims[l] = (0..params.dims()[l])
            .filter(|&j| w_in.column(j).iter().any(|&v| v != 0.0) && w_out.row(j).iter().any(|&v| v != 0.0))
            .count();
    }
    dims
}

/// True when both networks produce outputs within `tol` of each other on the probe batch.
/// Normalization depends on the batch, so equivalence is only certified for that batch.
pub fn f_equivalent(
    a: &NetworkParams,
    b: &NetworkParams,
    config: &ModelConfig,
    probe: ArrayView2<f64>,
    tol: f64,
) -> Result<bool> {
    Ok(max_output_difference(a, b, config, probe)? <= tol)
}

/// Largest absolute difference between the softmax outputs of two networks on a batch.
pub fn max_output_difference(
    a: &NetworkParams,
    b: &NetworkParams,
    config: &ModelConfig,
    probe: ArrayView2<f64>,
) -> Result<f64> {
    let mode = if probe.nrows() >= 2 { Mode::Train } else { Mode::Eval };
    let pa = forward(a, config, probe, mode)?.probs;
    let pb = forward(b, config, probe, mode)?.probs;
    Ok(pa.iter().zip(pb.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}

/// Multiplies `W_l` by `λ_l / λ` where `λ` is the geometric mean of the per-layer strengths. With
/// self-similar hidden nonlinearities and no normalization the outputs are unchanged, and the
/// per-layer penalty on the original equals the single-`λ` penalty on the result.
pub fn rescale_layers(params: &NetworkParams, lambdas: &[f64]) -> Result<NetworkParams> {
    if lambdas.len() != params.num_layers() {
        return Err(Error::shape(format!(
            "{} strengths for {} layers",
            lambdas.len(),
            params.num_layers()
        )));
    }
    if let Some(bad) = lambdas.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "per-layer strengths must be positive, got {bad}"
        )));
    }
    let lambda = geometric_mean(lambdas);
    let mut out = params.clone();
    for (w, &l) in out.weights_mut().iter_mut().zip(lambdas) {
        *w *= l / lambda;
    }
    Ok(out)
}

pub fn geometric_mean(values: &[f64]) -> f64 {
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: u64,
    pub birth: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadUnit {
    pub id: u64,
    pub layer: usize,
    pub birth: u64,
    pub death: u64,
}

/// Identity, birth and death epochs of every hidden unit. `alive[l - 1]` is ordered like the
/// columns of `W_l`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitLedger {
    pub alive: Vec<Vec<UnitRecord>>,
    pub dead: Vec<DeadUnit>,
    pub next_id: u64,
    /// Epoch stamped on births and deaths.
    pub epoch: u64,
}

impl UnitLedger {
    pub fn new(hidden: &[usize]) -> Self {
        let mut next_id = 0;
        let alive = hidden
            .iter()
            .map(|&w| {
                (0..w)
                    .map(|_| {
                        next_id += 1;
                        UnitRecord {
                            id: next_id - 1,
                            birth: 0,
                        }
                    })
                    .collect()
            })
            .collect();
        UnitLedger {
            alive,
            dead: Vec::new(),
            next_id,
            epoch: 0,
        }
    }

    pub fn id_of(&self, layer: usize, index: usize) -> u64 {
        self.alive[layer - 1][index].id
    }

    pub fn check(&self, params: &NetworkParams) -> Result<()> {
        let widths: Vec<usize> = self.alive.iter().map(Vec::len).collect();
        if widths != params.hidden_dims() {
            return Err(Error::shape(format!(
                "ledger widths {widths:?} differ from hidden widths {:?}",
                params.hidden_dims()
            )));
        }
        Ok(())
    }
}

impl UnitState for UnitLedger {
    fn push_unit(&mut self, layer: usize, _: &[usize]) {
        self.alive[layer - 1].push(UnitRecord {
            id: self.next_id,
            birth: self.epoch,
        });
        self.next_id += 1;
    }

    fn remove_unit(&mut self, layer: usize, index: usize) {
        let rec = self.alive[layer - 1].remove(index);
        self.dead.push(DeadUnit {
            id: rec.id,
            layer,
            birth: rec.birth,
            death: self.epoch,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NormMode;
    use crate::regularization::shrink_in_place;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(norm: NormMode, hidden: &[usize], seed: u64) -> (ModelConfig, NetworkParams) {
        let cfg = ModelConfig::new(hidden.len() + 1, 3, 4, norm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = NetworkParams::init(&cfg, hidden, &mut rng).unwrap();
        (cfg, p)
    }

    fn batch() -> Array2<f64> {
        array![
            [0.5, -1.0, 2.0],
            [1.0, 0.3, -0.7],
            [-1.2, 0.8, 0.1],
            [0.0, 2.0, 1.0],
            [0.4, 0.4, -2.0]
        ]
    }

    #[test]
    fn add_then_remove_restores_everything() {
        let (cfg, mut p) = net(NormMode::CapNorm, &[4, 3], 1);
        let original = p.clone();
        let mut ledger = UnitLedger::new(p.hidden_dims());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        ledger.epoch = 3;
        let j = add_unit(&mut p, &mut ledger, 1, &mut rng).unwrap();
        assert_eq!(j, 4);
        assert_eq!(p.dims(), &[3, 5, 3, 4]);
        assert!(p.weight(2).row(4).iter().all(|&v| v == 0.0));
        assert!(f_equivalent(&original, &p, &cfg, batch().view(), 1e-12).unwrap());
        ledger.epoch = 9;
        remove_unit(&mut p, &mut ledger, 1, 4).unwrap();
        assert_eq!(p, original);
        assert_eq!(
            ledger.dead,
            vec![DeadUnit {
                id: 7,
                layer: 1,
                birth: 3,
                death: 9
            }]
        );
    }

    #[test]
    fn input_and_output_layers_are_fixed() {
        let (_, mut p) = net(NormMode::CapNorm, &[2], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(
            add_unit(&mut p, &mut (), 0, &mut rng),
            Err(Error::NotHiddenLayer { .. })
        ));
        assert!(matches!(
            add_unit(&mut p, &mut (), 2, &mut rng),
            Err(Error::NotHiddenLayer { .. })
        ));
        assert!(remove_unit(&mut p, &mut (), 2, 0).is_err());
        assert!(matches!(
            remove_unit(&mut p, &mut (), 1, 2),
            Err(Error::NoSuchUnit { .. })
        ));
    }

    #[test]
    fn removing_a_zero_fan_in_unit_with_live_fan_out_under_capnorm() {
        let (cfg, mut p) = net(NormMode::CapNorm, &[4, 3], 5);
        p.weight_mut(2).column_mut(1).fill(0.0);
        assert!(p.weight(3).row(1).iter().any(|&v| v != 0.0));
        let before = p.clone();
        remove_unit(&mut p, &mut (), 2, 1).unwrap();
        assert!(max_output_difference(&before, &p, &cfg, batch().view()).unwrap() <= 1e-12);
    }

    #[test]
    fn zero_fan_in_detection() {
        let (_, mut p) = net(NormMode::CapNorm, &[4, 3], 5);
        assert!(find_zero_fanin_units(&p).is_empty());
        let len = p.weight(1).column(2).dot(&p.weight(1).column(2)).sqrt();
        assert!(shrink_in_place(p.weight_mut(1).column_mut(2), len));
        p.weight_mut(3).column_mut(0).fill(0.0);
        assert_eq!(find_zero_fanin_units(&p), vec![(1, 2)]);
    }

    #[test]
    fn proper_dimensionality_counts() {
        let (_, mut p) = net(NormMode::None, &[4, 3], 6);
        assert_eq!(proper_dimensionality(&p), p.dims());
        p.weight_mut(2).row_mut(0).fill(0.0);
        assert_eq!(proper_dimensionality(&p), vec![3, 3, 3, 4]);
    }

    #[test]
    fn perturbation_on_active_path_breaks_equivalence() {
        let cfg = ModelConfig::new(2, 2, 2, NormMode::None).unwrap();
        let a = NetworkParams::from_weights(
            &cfg,
            vec![array![[1.0, 0.5], [0.5, 1.0]], array![[1.0, -1.0], [0.5, 2.0]]],
        )
        .unwrap();
        let mut b = a.clone();
        b.weight_mut(2)[[0, 0]] += 1e-3;
        let x = array![[1.0, 2.0], [0.5, 0.5]];
        assert!(f_equivalent(&a, &a, &cfg, x.view(), 0.0).unwrap());
        assert!(!f_equivalent(&a, &b, &cfg, x.view(), 1e-6).unwrap());
    }

    #[test]
    fn rescale_examples() {
        let (cfg, p) = net(NormMode::None, &[4], 8);
        assert_eq!(rescale_layers(&p, &[0.3, 0.3]).unwrap(), p);
        let r = rescale_layers(&p, &[4.0, 1.0]).unwrap();
        assert!((&r.weight(1).view() - &(p.weight(1) * 2.0))
            .iter()
            .all(|v| v.abs() < 1e-15));
        assert!((&r.weight(2).view() - &(p.weight(2) * 0.5))
            .iter()
            .all(|v| v.abs() < 1e-15));
        assert!(max_output_difference(&p, &r, &cfg, batch().view()).unwrap() < 1e-12);
        assert!(rescale_layers(&p, &[1.0, 0.0]).is_err());
        assert!(rescale_layers(&p, &[1.0]).is_err());
    }

    #[test]
    fn random_mutations_keep_shapes_consistent() {
        let (_, mut p) = net(NormMode::BatchNorm { affine: true }, &[3, 2], 4);
        let mut ledger = UnitLedger::new(p.hidden_dims());
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let l = rng.random_range(1..=2);
            if rng.random_bool(0.5) || p.dims()[l] == 0 {
                add_unit(&mut p, &mut ledger, l, &mut rng).unwrap();
            } else {
                let j = rng.random_range(0..p.dims()[l]);
                remove_unit(&mut p, &mut ledger, l, j).unwrap();
            }
            p.check_consistency().unwrap();
            ledger.check(&p).unwrap();
        }
    }
}
