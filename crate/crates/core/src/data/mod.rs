//! Datasets, file loaders, seeded splits, and synthetic fixtures.

mod idx;
mod synthetic;
mod text;

pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx};
pub use synthetic::{gen_synthetic, SyntheticKind, SyntheticSpec};
pub use text::{load_amat, load_csv, parse_amat, parse_csv};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Per-feature standardization fitted on one split and applied to the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<usize>,
    num_classes: usize,
    scaling: Option<FeatureScaling>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("dataset needs at least one class".into()));
        }
        if let Some((row, &label)) = y.iter().enumerate().find(|(_, &c)| c >= num_classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            x,
            y,
            num_classes,
            scaling: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn scaling(&self) -> Option<&FeatureScaling> {
        self.scaling.as_ref()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            num_classes: self.num_classes,
            scaling: self.scaling.clone(),
        }
    }

    /// Fits zero-mean unit-variance scaling on this dataset. Constant features keep std 1.
    pub fn fit_scaling(&self) -> FeatureScaling {
        let n = self.len().max(1) as f64;
        let mean: Vec<f64> = self.x.columns().into_iter().map(|c| c.sum() / n).collect();
        let std = self
            .x
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, &m)| {
                let sd = (c.fold(0.0, |a, &v| a + (v - m) * (v - m)) / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        FeatureScaling { mean, std }
    }

    pub fn apply_scaling(&mut self, scaling: &FeatureScaling) -> Result<()> {
        if scaling.mean.len() != self.input_dim() || scaling.std.len() != self.input_dim() {
            return Err(Error::shape("scaling width differs from feature width"));
        }
        for (j, mut col) in self.x.columns_mut().into_iter().enumerate() {
            let (m, s) = (scaling.mean[j], scaling.std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        self.scaling = Some(scaling.clone());
        Ok(())
    }

    /// SHA-256 over the shape, class count, little-endian feature bits and labels.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.len() as u64).to_le_bytes());
        h.update((self.input_dim() as u64).to_le_bytes());
        h.update((self.num_classes as u64).to_le_bytes());
        for v in self.x.iter() {
            h.update(v.to_le_bytes());
        }
        for &y in &self.y {
            h.update((y as u64).to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Seeded permutation of the rows followed by contiguous slices of the given sizes.
pub fn split(dataset: &Dataset, sizes: &[usize], seed: u64) -> Result<Vec<Dataset>> {
    let total: usize = sizes.iter().sum();
    if total != dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "split sizes sum to {total}, dataset has {} rows",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut start = 0;
    Ok(sizes
        .iter()
        .map(|&n| {
            let part = dataset.select(&order[start..start + n]);
            start += n;
            part
        })
        .collect())
}
