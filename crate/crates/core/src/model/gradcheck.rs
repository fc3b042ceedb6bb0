//! Central finite-difference oracle for the analytic backward pass, plus a generator of random
//! small networks whose ReLU inputs and CapNorm deviations stay clear of their kinks.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::backward::{backward, AffineGrad, Gradients};
use super::forward::{forward, loss_and_error, Mode};
use super::{ModelConfig, NetworkParams, NormMode};
use crate::error::{Error, Result};

/// Magnitudes below this are compared on an absolute basis in [`max_relative_error`].
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

fn scaled_loss(
    params: &NetworkParams,
    config: &ModelConfig,
    x: ArrayView2<f64>,
    labels: &[usize],
    scale: f64,
) -> Result<f64> {
    let cache = forward(params, config, x, Mode::Train)?;
    Ok(scale * loss_and_error(&cache, labels)?.0)
}

/// `(E(w + h) - E(w - h)) / 2h` for every weight and affine parameter, where `E` is the scaled
/// mean batch cross-entropy. The regularizer is not included.
pub fn numeric_gradient(
    params: &NetworkParams,
    config: &ModelConfig,
    x: ArrayView2<f64>,
    labels: &[usize],
    scale: f64,
    h: f64,
) -> Result<Gradients> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut probe = params.clone();
    let mut grads = Gradients::zeros_like(params);
    for k in 0..params.num_layers() {
        let (rows, cols) = params.weights()[k].dim();
        for i in 0..rows {
            for j in 0..cols {
                let w = params.weights()[k][[i, j]];
                probe.weights_mut()[k][[i, j]] = w + h;
                let up = scaled_loss(&probe, config, x, labels, scale)?;
                probe.weights_mut()[k][[i, j]] = w - h;
                let down = scaled_loss(&probe, config, x, labels, scale)?;
                probe.weights_mut()[k][[i, j]] = w;
                grads.weights[k][[i, j]] = (up - down) / (2.0 * h);
            }
        }
    }
    for l in 1..params.num_layers() {
        let Some(affine) = params.norm_buffers(l).affine.clone() else {
            continue;
        };
        let mut out = AffineGrad {
            gamma: affine.gamma.clone(),
            beta: affine.beta.clone(),
        };
        for j in 0..affine.gamma.len() {
            for which in 0..2 {
                let orig = if which == 0 { affine.gamma[j] } else { affine.beta[j] };
                let mut eval = |v: f64| -> Result<f64> {
                    let a = probe.norm_buffers_mut(l).affine.as_mut().expect("affine");
                    if which == 0 {
                        a.gamma[j] = v
                    } else {
                        a.beta[j] = v
                    }
                    scaled_loss(&probe, config, x, labels, scale)
                };
                let up = eval(orig + h)?;
                let down = eval(orig - h)?;
                eval(orig)?;
                let d = (up - down) / (2.0 * h);
                if which == 0 {
                    out.gamma[j] = d
                } else {
                    out.beta[j] = d
                }
            }
        }
        grads.affine[l - 1] = Some(out);
    }
    Ok(grads)
}

/// Largest entrywise `|a - n| / max(|a|, |n|, floor)` over all gradient entries.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients, floor: f64) -> f64 {
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.weights.iter().zip(&numeric.weights) {
        for (&x, &y) in a.iter().zip(n.iter()) {
            worst = worst.max(rel(x, y));
        }
    }
    for (a, n) in analytic.affine.iter().zip(&numeric.affine) {
        if let (Some(a), Some(n)) = (a, n) {
            for (&x, &y) in a
                .gamma
                .iter()
                .chain(a.beta.iter())
                .zip(n.gamma.iter().chain(n.beta.iter()))
            {
                worst = worst.max(rel(x, y));
            }
        }
    }
    worst
}

/// A randomly drawn network, batch and loss scale.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub config: ModelConfig,
    pub params: NetworkParams,
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    pub scale: f64,
}

/// Ranges for [`random_case`].
#[derive(Debug, Clone)]
pub struct CaseSpec {
    pub layers: Vec<usize>,
    pub widths: (usize, usize),
    pub batch: (usize, usize),
    pub norm: NormMode,
    /// Minimum distance of every ReLU input from 0 and of every CapNorm std from 1.
    pub margin: f64,
}

impl Default for CaseSpec {
    fn default() -> Self {
        CaseSpec {
            layers: vec![2, 3],
            widths: (3, 8),
            batch: (5, 16),
            norm: NormMode::CapNorm,
            margin: 1e-3,
        }
    }
}

/// Summary of how a case exercises the CapNorm branches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BranchCount {
    pub unit_divisor: usize,
    pub std_divisor: usize,
}

impl GradCheckCase {
    pub fn capnorm_branches(&self) -> BranchCount {
        let mut count = BranchCount::default();
        if self.config.norm != NormMode::CapNorm {
            return count;
        }
        let cache = forward(&self.params, &self.config, self.x.view(), Mode::Train).expect("valid case");
        for layer in &cache.layers {
            for &s in layer.stats.as_ref().expect("train stats").std.iter() {
                if s > 1.0 {
                    count.std_divisor += 1;
                } else {
                    count.unit_divisor += 1;
                }
            }
        }
        count
    }

    /// Runs both gradient routes and returns the worst relative disagreement.
    pub fn check(&self, h: f64) -> Result<f64> {
        let cache = forward(&self.params, &self.config, self.x.view(), Mode::Train)?;
        let analytic = backward(&self.params, &self.config, &cache, &self.labels, self.scale)?;
        let numeric = numeric_gradient(&self.params, &self.config, self.x.view(), &self.labels, self.scale, h)?;
        Ok(max_relative_error(&analytic, &numeric, RELATIVE_ERROR_FLOOR))
    }
}

fn clear_of_kinks(case: &GradCheckCase, margin: f64) -> bool {
    let Ok(cache) = forward(&case.params, &case.config, case.x.view(), Mode::Train) else {
        return false;
    };
    for (k, layer) in cache.layers.iter().enumerate() {
        let pre_relu = match (&layer.normalized, &case.params.norm_buffers(k + 1).affine) {
            (Some(y), Some(a)) => y * &a.gamma + &a.beta,
            (Some(y), None) => y.clone(),
            (None, _) => layer.z.clone(),
        };
        if pre_relu.iter().any(|v| v.abs() < margin) {
            return false;
        }
        if case.config.norm == NormMode::CapNorm {
            let stats = layer.stats.as_ref().expect("train stats");
            if stats.std.iter().any(|s| (s - 1.0).abs() < margin * 10.0) {
                return false;
            }
        }
    }
    true
}

/// Draws random networks until one is clear of every kink. Fan-ins are randomly stretched or
/// squashed so that both CapNorm branches occur.
pub fn random_case<R: Rng + ?Sized>(spec: &CaseSpec, rng: &mut R) -> Result<GradCheckCase> {
    if spec.layers.is_empty()
        || spec.widths.0 == 0
        || spec.widths.0 > spec.widths.1
        || spec.batch.0 < 2
        || spec.batch.0 > spec.batch.1
    {
        return Err(Error::InvalidArgument(format!("bad gradient-check case spec {spec:?}")));
    }
    for _attempt in 0..10_000 {
        let num_layers = spec.layers[rng.random_range(0..spec.layers.len())];
        let mut width = || rng.random_range(spec.widths.0..=spec.widths.1);
        let input_dim = width();
        let output_dim = width();
        let hidden: Vec<usize> = (1..num_layers).map(|_| width()).collect();
        let batch = rng.random_range(spec.batch.0..=spec.batch.1);
        let config = ModelConfig::new(num_layers, input_dim, output_dim, spec.norm)?;
        let mut params = NetworkParams::init(&config, &hidden, rng)?;
        for w in params.weights_mut() {
            for mut col in w.columns_mut() {
                let stretch: f64 = if rng.random_bool(0.5) { 4.0 } else { 0.5 };
                col *= stretch;
            }
        }
        for l in 1..num_layers {
            if let Some(a) = params.norm_buffers_mut(l).affine.as_mut() {
                a.gamma.mapv_inplace(|_| rng.random_range(0.5..2.0));
                a.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
        }
        let x = Array2::from_shape_fn((batch, input_dim), |_| StandardNormal.sample(rng));
        let labels = (0..batch).map(|_| rng.random_range(0..output_dim)).collect();
        let scale = rng.random_range(0.1..1.0);
        let case = GradCheckCase {
            config,
            params,
            x,
            labels,
            scale,
        };
        if clear_of_kinks(&case, spec.margin) {
            return Ok(case);
        }
    }
    Err(Error::InvalidArgument("could not draw a case clear of kinks".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_by_hand() {
        // d/dw of w^2 by central differences.
        let w: f64 = 0.7;
        let h = 1e-5;
        let f = |v: f64| v * v;
        let g = (f(w + h) - f(w - h)) / (2.0 * h);
        assert!((g - 2.0 * w).abs() < 1e-9);
    }

    #[test]
    fn linear_net_matches_closed_form() {
        // One layer, two classes, no hidden units: dE/dW = x^T (p - onehot) / B.
        let cfg = ModelConfig::new(1, 1, 2, NormMode::None).unwrap();
        let p = NetworkParams::from_weights(&cfg, vec![array![[0.3, -0.2]]]).unwrap();
        let x = array![[1.5]];
        let g = numeric_gradient(&p, &cfg, x.view(), &[1], 1.0, 1e-5).unwrap();
        let z: [f64; 2] = [0.45, -0.3];
        let p1 = z[1].exp() / (z[0].exp() + z[1].exp());
        let expected = [1.5 * (1.0 - p1), 1.5 * (p1 - 1.0)];
        for k in 0..2 {
            assert!((g.weights[0][[0, k]] - expected[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_nonpositive_step() {
        let cfg = ModelConfig::new(1, 1, 2, NormMode::None).unwrap();
        let p = NetworkParams::zeros(&cfg, &[]).unwrap();
        assert!(numeric_gradient(&p, &cfg, array![[1.0]].view(), &[0], 1.0, 0.0).is_err());
    }

    #[test]
    fn random_cases_agree_in_every_norm_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for norm in [
            NormMode::CapNorm,
            NormMode::None,
            NormMode::BatchNorm { affine: false },
            NormMode::BatchNorm { affine: true },
        ] {
            let spec = CaseSpec {
                norm,
                widths: (3, 5),
                batch: (5, 8),
                ..CaseSpec::default()
            };
            for _ in 0..3 {
                let case = random_case(&spec, &mut rng).unwrap();
                let err = case.check(1e-5).unwrap();
                assert!(err < 1e-6, "{norm:?}: relative error {err}");
            }
        }
    }
}
