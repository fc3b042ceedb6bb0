use ndarray::{Array1, Array2, Axis, Zip};

use super::forward::{check_labels, ForwardCache, Mode};
use super::norm;
use super::{ModelConfig, NetworkParams, NormMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrad {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Loss gradients, shape-congruent with the parameters they were computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `G_l` stored at index `l - 1`.
    pub weights: Vec<Array2<f64>>,
    /// Per hidden layer; `Some` only for affine batch normalization.
    pub affine: Vec<Option<AffineGrad>>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            weights: params.weights().iter().map(|w| Array2::zeros(w.dim())).collect(),
            affine: (1..params.num_layers())
                .map(|l| {
                    params.norm_buffers(l).affine.as_ref().map(|a| AffineGrad {
                        gamma: Array1::zeros(a.gamma.len()),
                        beta: Array1::zeros(a.beta.len()),
                    })
                })
                .collect(),
        }
    }

    /// `G_l` for `1 <= l <= L`.
    pub fn weight(&self, l: usize) -> &Array2<f64> {
        &self.weights[l - 1]
    }

    pub fn check_congruent(&self, params: &NetworkParams) -> Result<()> {
        if self.weights.len() != params.num_layers() {
            return Err(Error::shape("gradient layer count differs from parameters"));
        }
        for (k, (g, w)) in self.weights.iter().zip(params.weights()).enumerate() {
            if g.dim() != w.dim() {
                return Err(Error::shape(format!(
                    "G_{} is {:?} but W_{} is {:?}",
                    k + 1,
                    g.dim(),
                    k + 1,
                    w.dim()
                )));
            }
        }
        Ok(())
    }
}

/// Exact gradient of `scale * mean_batch(cross-entropy)` with respect to every weight (and affine
/// normalization parameter). Passing `scale = |batch| / |D|` yields the batch sum divided by the
/// full dataset size.
pub fn backward(
    params: &NetworkParams,
    config: &ModelConfig,
    cache: &ForwardCache,
    labels: &[usize],
    scale: f64,
) -> Result<Gradients> {
    let num_layers = config.num_layers;
    if params.num_layers() != num_layers || cache.layers.len() + 1 != num_layers {
        return Err(Error::shape("cache does not match the parameters"));
    }
    for (k, layer) in cache.layers.iter().enumerate() {
        if layer.z.ncols() != params.dims()[k + 1] {
            return Err(Error::shape(format!(
                "cached layer {} has width {}, parameters have {}",
                k + 1,
                layer.z.ncols(),
                params.dims()[k + 1]
            )));
        }
    }
    if cache.logits.ncols() != params.dims()[num_layers] {
        return Err(Error::shape("cached output width differs from parameters"));
    }
    if config.norm != NormMode::None && num_layers > 1 && cache.mode != Mode::Train {
        return Err(Error::InvalidArgument(
            "backward through normalization needs a train-mode forward cache".into(),
        ));
    }
    let batch = cache.batch_size();
    check_labels(labels, batch, config.output_dim)?;

    let mut dz = cache.probs.clone();
    for (mut row, &y) in dz.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    dz *= scale / batch as f64;

    let mut grads = Gradients::zeros_like(params);
    for l in (1..=num_layers).rev() {
        grads.weights[l - 1] = cache.layer_input(l).t().dot(&dz);
        if l == 1 {
            break;
        }
        let hidden = &cache.layers[l - 2];
        let mut dy = dz.dot(&params.weight(l).t());
        Zip::from(&mut dy).and(&hidden.activation).for_each(|g, &a| {
            if a <= 0.0 {
                *g = 0.0;
            }
        });
        dz = match (&hidden.normalized, &hidden.stats) {
            (Some(normalized), Some(stats)) => {
                if let Some(affine) = &params.norm_buffers(l - 1).affine {
                    grads.affine[l - 2] = Some(AffineGrad {
                        gamma: (&dy * normalized).sum_axis(Axis(0)),
                        beta: dy.sum_axis(Axis(0)),
                    });
                    dy *= &affine.gamma.view().insert_axis(Axis(0));
                }
                let mut out = Array2::zeros(dy.dim());
                for j in 0..dy.ncols() {
                    let s = stats.column(j);
                    let col = match config.norm {
                        NormMode::CapNorm => norm::capnorm_backward(dy.column(j), &s, hidden.z.column(j)),
                        _ => norm::batchnorm_backward(dy.column(j), &s, hidden.z.column(j)),
                    };
                    out.column_mut(j).assign(&col);
                }
                out
            }
            _ => dy,
        };
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, ModelConfig, NetworkParams};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_fan_out_gives_zero_fan_in_gradient() {
        let cfg = ModelConfig::new(3, 3, 2, NormMode::CapNorm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = NetworkParams::init(&cfg, &[4, 3], &mut rng).unwrap();
        p.weight_mut(2).row_mut(1).fill(0.0);
        let x = array![[0.3, -1.0, 2.0], [1.0, 1.0, 0.0], [-0.5, 0.2, 0.1], [2.0, -2.0, 1.0]];
        let c = forward(&p, &cfg, x.view(), Mode::Train).unwrap();
        let g = backward(&p, &cfg, &c, &[0, 1, 1, 0], 1.0).unwrap();
        assert!(g.weight(1).column(1).iter().all(|&v| v == 0.0));
        assert!(g.weight(1).column(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn rejects_eval_cache_and_drift() {
        let cfg = ModelConfig::new(2, 2, 2, NormMode::CapNorm).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = NetworkParams::init(&cfg, &[3], &mut rng).unwrap();
        let x = array![[1.0, 2.0], [0.0, -1.0]];
        let c = forward(&p, &cfg, x.view(), Mode::Eval).unwrap();
        assert!(backward(&p, &cfg, &c, &[0, 1], 1.0).is_err());
        let c = forward(&p, &cfg, x.view(), Mode::Train).unwrap();
        let bigger = NetworkParams::init(&cfg, &[4], &mut rng).unwrap();
        assert!(matches!(
            backward(&bigger, &cfg, &c, &[0, 1], 1.0),
            Err(Error::Shape(_))
        ));
    }
}
