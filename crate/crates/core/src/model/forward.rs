use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::norm::{self, NormStats};
use super::{ModelConfig, NetworkParams, NormMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with the running statistics stored in the parameters.
    Eval,
}

/// Batch statistics of every unit of one hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    pub scale: Array1<f64>,
}

impl LayerStats {
    pub fn column(&self, j: usize) -> NormStats {
        NormStats {
            mean: self.mean[j],
            std: self.std[j],
            scale: self.scale[j],
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    /// Pre-activations `z_l = x_{l-1} W_l`.
    pub z: Array2<f64>,
    /// Normalized pre-activations before any affine transform; absent when the layer is not
    /// normalized.
    pub normalized: Option<Array2<f64>>,
    /// Batch statistics (train mode only).
    pub stats: Option<LayerStats>,
    /// Post-ReLU activations `x_l`.
    pub activation: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    pub input: Array2<f64>,
    /// Hidden layers `1..L-1`, in order.
    pub layers: Vec<LayerCache>,
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    /// Activations feeding layer `l` (`x_{l-1}`).
    pub fn layer_input(&self, l: usize) -> &Array2<f64> {
        if l == 1 {
            &self.input
        } else {
            &self.layers[l - 2].activation
        }
    }
}

fn normalize_train(z: &Array2<f64>, mode: NormMode) -> (Array2<f64>, LayerStats) {
    let width = z.ncols();
    let mut out = Array2::zeros(z.dim());
    let mut stats = LayerStats {
        mean: Array1::zeros(width),
        std: Array1::zeros(width),
        scale: Array1::zeros(width),
    };
    for (j, (col, mut dst)) in z.columns().into_iter().zip(out.columns_mut()).enumerate() {
        let s = match mode {
            NormMode::CapNorm => norm::capnorm_stats(col),
            _ => norm::batchnorm_stats(col),
        };
        Zip::from(&mut dst)
            .and(&col)
            .for_each(|d, &v| *d = (v - s.mean) / s.scale);
        stats.mean[j] = s.mean;
        stats.std[j] = s.std;
        stats.scale[j] = s.scale;
    }
    (out, stats)
}

fn row_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    probs
}

/// Runs the network on a batch and records every intermediate needed by [`super::backward`].
pub fn forward(params: &NetworkParams, config: &ModelConfig, x: ArrayView2<f64>, mode: Mode) -> Result<ForwardCache> {
    let dims = params.dims();
    if params.num_layers() != config.num_layers
        || dims[0] != config.input_dim
        || dims[config.num_layers] != config.output_dim
    {
        return Err(Error::shape(format!(
            "parameters with dims {dims:?} do not match the model configuration"
        )));
    }
    if x.ncols() != config.input_dim {
        return Err(Error::shape(format!(
            "batch has {} columns, network expects {}",
            x.ncols(),
            config.input_dim
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let normalized = config.norm != NormMode::None && config.num_layers > 1;
    if normalized && mode == Mode::Train && x.nrows() < 2 {
        return Err(Error::BatchTooSmall(x.nrows()));
    }

    let input = x.to_owned();
    let mut layers: Vec<LayerCache> = Vec::with_capacity(config.num_layers - 1);
    for l in 1..config.num_layers {
        let prev = if l == 1 { &input } else { &layers[l - 2].activation };
        let z = prev.dot(params.weight(l));
        let (normalized, stats) = match (config.norm, mode) {
            (NormMode::None, _) => (None, None),
            (m, Mode::Train) => {
                let (y, s) = normalize_train(&z, m);
                (Some(y), Some(s))
            }
            (_, Mode::Eval) => {
                let buf = params.norm_buffers(l);
                let y = (&z - &buf.running_mean.view().insert_axis(Axis(0)))
                    / buf.running_scale.view().insert_axis(Axis(0));
                (Some(y), None)
            }
        };
        let mut activation = match &normalized {
            Some(y) => match &params.norm_buffers(l).affine {
                Some(a) => y * &a.gamma + &a.beta,
                None => y.clone(),
            },
            None => z.clone(),
        };
        activation.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
        layers.push(LayerCache {
            z,
            normalized,
            stats,
            activation,
        });
    }
    let last_in = if config.num_layers == 1 {
        &input
    } else {
        &layers[config.num_layers - 2].activation
    };
    let logits = last_in.dot(params.weight(config.num_layers));
    let probs = row_softmax(&logits);
    Ok(ForwardCache {
        mode,
        input,
        layers,
        logits,
        probs,
    })
}

pub(crate) fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(format!("{} labels for {} rows", labels.len(), rows)));
    }
    if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::LabelOutOfRange { row, label, classes });
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Summed cross-entropy and misclassification count of a batch.
pub(crate) fn loss_sum_and_errors(cache: &ForwardCache, labels: &[usize]) -> Result<(f64, usize)> {
    check_labels(labels, cache.batch_size(), cache.logits.ncols())?;
    let mut ce = 0.0;
    let mut errors = 0;
    for ((logits, probs), &y) in cache.logits.rows().into_iter().zip(cache.probs.rows()).zip(labels) {
        let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + logits.fold(0.0, |acc, &v| acc + (v - max).exp()).ln();
        ce += lse - logits[y];
        if argmax(probs) != y {
            errors += 1;
        }
    }
    Ok((ce, errors))
}

/// Mean cross-entropy over the batch and the number of misclassified rows.
pub fn loss_and_error(cache: &ForwardCache, labels: &[usize]) -> Result<(f64, usize)> {
    let (sum, errors) = loss_sum_and_errors(cache, labels)?;
    Ok((sum / cache.batch_size() as f64, errors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn probs_cache(probs: Array2<f64>) -> ForwardCache {
        ForwardCache {
            mode: Mode::Eval,
            input: Array2::zeros((probs.nrows(), 1)),
            layers: vec![],
            logits: probs.mapv(f64::ln),
            probs,
        }
    }

    #[test]
    fn zero_weights_give_uniform_output() {
        let cfg = ModelConfig::new(3, 4, 10, NormMode::CapNorm).unwrap();
        let p = NetworkParams::zeros(&cfg, &[6, 5]).unwrap();
        let x = array![[1.0, 2.0, 3.0, 4.0], [-1.0, 0.5, 2.0, 0.0], [3.0, 3.0, 3.0, 3.0]];
        let c = forward(&p, &cfg, x.view(), Mode::Train).unwrap();
        for l in &c.layers {
            assert!(l.z.iter().all(|&v| v == 0.0));
            assert!(l.activation.iter().all(|&v| v == 0.0));
        }
        assert!(c.probs.iter().all(|&v| (v - 0.1).abs() < 1e-15));
        let (ce, _) = loss_and_error(&c, &[0, 3, 9]).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-12);
        assert!((ce - std::f64::consts::LN_10).abs() < 1e-6);
    }

    #[test]
    fn two_two_two_matches_scalar_recomputation() {
        // Recompute a 2-2-2 CapNorm network by hand, scalar by scalar.
        let cfg = ModelConfig::new(2, 2, 2, NormMode::CapNorm).unwrap();
        let w1 = array![[1.0, -2.0], [0.5, 3.0]];
        let w2 = array![[2.0, -1.0], [0.25, 1.5]];
        let p = NetworkParams::from_weights(&cfg, vec![w1.clone(), w2.clone()]).unwrap();
        let x = array![[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]];
        let c = forward(&p, &cfg, x.view(), Mode::Train).unwrap();

        let rows = [[1.0, 0.0], [0.0, 1.0], [2.0, -1.0]];
        let mut hidden = [[0.0f64; 2]; 3];
        for j in 0..2 {
            let z: Vec<f64> = rows.iter().map(|r| r[0] * w1[[0, j]] + r[1] * w1[[1, j]]).collect();
            let mu = (z[0] + z[1] + z[2]) / 3.0;
            let var = z.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 3.0;
            let s = var.sqrt().max(1.0);
            for i in 0..3 {
                hidden[i][j] = ((z[i] - mu) / s).max(0.0);
            }
        }
        for i in 0..3 {
            let o: Vec<f64> = (0..2)
                .map(|k| hidden[i][0] * w2[[0, k]] + hidden[i][1] * w2[[1, k]])
                .collect();
            let m = o[0].max(o[1]);
            let e: Vec<f64> = o.iter().map(|v| (v - m).exp()).collect();
            for k in 0..2 {
                assert!((c.layers[0].activation[[i, k]] - hidden[i][k]).abs() < 1e-14);
                assert!((c.probs[[i, k]] - e[k] / (e[0] + e[1])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn hand_computed_cross_entropy() {
        let probs = array![[0.7, 0.2, 0.1], [0.1, 0.1, 0.8], [0.3, 0.4, 0.3]];
        let c = probs_cache(probs);
        let (ce, err) = loss_and_error(&c, &[0, 2, 0]).unwrap();
        let expected = -(0.7f64.ln() + 0.8f64.ln() + 0.3f64.ln()) / 3.0;
        assert!((ce - expected).abs() < 1e-12);
        assert_eq!(err, 1);
    }

    #[test]
    fn perfect_prediction_and_ties() {
        let c = probs_cache(array![[1.0, 0.0], [0.5, 0.5]]);
        let (ce, err) = loss_and_error(&c, &[0, 0]).unwrap();
        assert!((ce - 0.5 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(err, 0, "ties resolve to the lowest class index");
        assert!(matches!(
            loss_and_error(&c, &[0, 2]),
            Err(Error::LabelOutOfRange { row: 1, label: 2, .. })
        ));
    }

    #[test]
    fn shape_and_batch_errors() {
        let cfg = ModelConfig::new(2, 3, 2, NormMode::CapNorm).unwrap();
        let p = NetworkParams::zeros(&cfg, &[2]).unwrap();
        assert!(matches!(
            forward(&p, &cfg, Array2::zeros((4, 2)).view(), Mode::Train),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            forward(&p, &cfg, Array2::zeros((0, 3)).view(), Mode::Eval),
            Err(Error::EmptyBatch)
        ));
        assert!(matches!(
            forward(&p, &cfg, Array2::zeros((1, 3)).view(), Mode::Train),
            Err(Error::BatchTooSmall(1))
        ));
        assert!(forward(&p, &cfg, Array2::zeros((1, 3)).view(), Mode::Eval).is_ok());
    }
}
