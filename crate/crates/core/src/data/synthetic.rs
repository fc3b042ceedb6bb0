//! Small generated classification tasks.
//!
//! * `GaussianBlobs`: example `i` has class `i mod classes`. Class `k` is centered on the unit
//!   circle at angle `2πk / classes` in the first two coordinates (on `[-1, 1]` along the single
//!   axis when `input_dim == 1`); every coordinate gets independent `N(0, noise²)` jitter.
//! * `XorQuadrants`: two classes. The first two coordinates are uniform on `[-1, 1]²` and the
//!   class is 1 when exactly one of them is positive. Jitter `N(0, noise²)` is added to every
//!   coordinate after labelling; extra coordinates carry jitter only.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    GaussianBlobs,
    XorQuadrants,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub noise: f64,
}

pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    if spec.n < spec.classes || spec.classes == 0 || spec.input_dim == 0 || !(spec.noise >= 0.0) {
        return Err(Error::InvalidArgument(format!("bad synthetic dataset spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array2::zeros((spec.n, spec.input_dim));
    let mut y = Vec::with_capacity(spec.n);
    match spec.kind {
        SyntheticKind::GaussianBlobs => {
            for i in 0..spec.n {
                let k = i % spec.classes;
                let mut row = x.row_mut(i);
                if spec.input_dim == 1 {
                    row[0] = if spec.classes == 1 {
                        0.0
                    } else {
                        -1.0 + 2.0 * k as f64 / (spec.classes - 1) as f64
                    };
                } else {
                    let angle = 2.0 * PI * k as f64 / spec.classes as f64;
                    row[0] = angle.cos();
                    row[1] = angle.sin();
                }
                y.push(k);
            }
        }
        SyntheticKind::XorQuadrants => {
            if spec.classes != 2 || spec.input_dim < 2 {
                return Err(Error::InvalidArgument(
                    "xor_quadrants needs exactly 2 classes and at least 2 inputs".into(),
                ));
            }
            for i in 0..spec.n {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                x[[i, 0]] = a;
                x[[i, 1]] = b;
                y.push(usize::from((a > 0.0) != (b > 0.0)));
            }
        }
    }
    if spec.noise > 0.0 {
        x.mapv_inplace(|v| {
            let e: f64 = rng.sample(StandardNormal);
            v + spec.noise * e
        });
    }
    Dataset::new(x, y, spec.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: SyntheticKind, n: usize, classes: usize, noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            kind,
            n,
            input_dim: 2,
            classes,
            noise,
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let s = spec(SyntheticKind::XorQuadrants, 50, 2, 0.1);
        assert_eq!(gen_synthetic(&s, 3).unwrap(), gen_synthetic(&s, 3).unwrap());
        assert_ne!(gen_synthetic(&s, 3).unwrap(), gen_synthetic(&s, 4).unwrap());
    }

    #[test]
    fn one_point_per_class_without_noise() {
        let d = gen_synthetic(&spec(SyntheticKind::GaussianBlobs, 4, 4, 0.0), 0).unwrap();
        assert_eq!(d.labels(), &[0, 1, 2, 3]);
        assert!((d.features()[[1, 1]] - 1.0).abs() < 1e-15);
        assert!((d.features()[[2, 0]] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn xor_labels_follow_quadrants() {
        let d = gen_synthetic(&spec(SyntheticKind::XorQuadrants, 200, 2, 0.0), 9).unwrap();
        for (row, &y) in d.features().rows().into_iter().zip(d.labels()) {
            assert_eq!(y == 1, (row[0] > 0.0) != (row[1] > 0.0));
        }
        assert!(gen_synthetic(&spec(SyntheticKind::XorQuadrants, 10, 3, 0.0), 0).is_err());
        assert!(gen_synthetic(&spec(SyntheticKind::GaussianBlobs, 2, 3, 0.0), 0).is_err());
    }

    /// Without a bias a linear classifier labels `x` and `-x` differently, but XOR labels them the
    /// same, so every direction through the origin errs on about half of the points.
    #[test]
    fn xor_defeats_linear_classifiers_through_the_origin() {
        let d = gen_synthetic(&spec(SyntheticKind::XorQuadrants, 2000, 2, 0.05), 1).unwrap();
        let mut best = 1.0f64;
        for k in 0..3600 {
            let t = 2.0 * PI * k as f64 / 3600.0;
            let (c, s) = (t.cos(), t.sin());
            let wrong = d
                .features()
                .rows()
                .into_iter()
                .zip(d.labels())
                .filter(|(r, &y)| usize::from(c * r[0] + s * r[1] > 0.0) != y)
                .count();
            best = best.min(wrong as f64 / d.len() as f64);
        }
        assert!(best > 0.45, "best linear error {best}");
    }

    #[test]
    fn blobs_are_linearly_separable_at_low_noise() {
        // Nearest-center rule; two centers at (1, 0) and (-1, 0).
        let d = gen_synthetic(&spec(SyntheticKind::GaussianBlobs, 500, 2, 0.1), 2).unwrap();
        let wrong = d
            .features()
            .rows()
            .into_iter()
            .zip(d.labels())
            .filter(|(r, &y)| usize::from(r[0] < 0.0) != y)
            .count();
        assert_eq!(wrong, 0);
    }
}
