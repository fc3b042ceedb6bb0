//! Column-wise normalizers: CapNorm and plain batch normalization.
//!
//! CapNorm maps a pre-activation column `z` to `(z - mean) / max(std, 1)`. The standard deviation
//! is the population one (divide by the batch size). At `std == 1` the constant-divisor branch is
//! taken.

use ndarray::{Array1, ArrayView1};

use super::BATCHNORM_EPS;

/// Statistics of one column of pre-activations over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// The divisor actually applied.
    pub scale: f64,
}

fn mean_std(z: ArrayView1<f64>) -> (f64, f64) {
    let n = z.len() as f64;
    let mean = z.sum() / n;
    let var = z.fold(0.0, |acc, &v| acc + (v - mean) * (v - mean)) / n;
    (mean, var.sqrt())
}

pub fn capnorm_stats(z: ArrayView1<f64>) -> NormStats {
    let (mean, std) = mean_std(z);
    NormStats {
        mean,
        std,
        scale: if std > 1.0 { std } else { 1.0 },
    }
}

pub fn batchnorm_stats(z: ArrayView1<f64>) -> NormStats {
    let (mean, std) = mean_std(z);
    NormStats {
        mean,
        std,
        scale: (std * std + BATCHNORM_EPS).sqrt(),
    }
}

pub fn apply(z: ArrayView1<f64>, stats: &NormStats) -> Array1<f64> {
    z.mapv(|v| (v - stats.mean) / stats.scale)
}

pub fn capnorm_forward(z: ArrayView1<f64>) -> (Array1<f64>, NormStats) {
    let stats = capnorm_stats(z);
    (apply(z, &stats), stats)
}

/// Gradient of a normalized column with respect to its input. When the divisor is the constant 1
/// only the mean subtraction is differentiated; otherwise this is the batch-normalization Jacobian
/// `(dy - mean(dy) - y * mean(dy * y)) / scale`.
pub fn normalize_backward(dy: ArrayView1<f64>, stats: &NormStats, z: ArrayView1<f64>, scaled: bool) -> Array1<f64> {
    let n = dy.len() as f64;
    let mean_dy = dy.sum() / n;
    if !scaled {
        return dy.mapv(|g| g - mean_dy);
    }
    let y = apply(z, stats);
    let mean_dy_y = dy.dot(&y) / n;
    let mut dz = dy.to_owned();
    dz.zip_mut_with(&y, |g, &yi| *g = (*g - mean_dy - yi * mean_dy_y) / stats.scale);
    dz
}

pub fn capnorm_backward(dy: ArrayView1<f64>, stats: &NormStats, z: ArrayView1<f64>) -> Array1<f64> {
    normalize_backward(dy, stats, z, stats.std > 1.0)
}

pub fn batchnorm_backward(dy: ArrayView1<f64>, stats: &NormStats, z: ArrayView1<f64>) -> Array1<f64> {
    normalize_backward(dy, stats, z, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn close(a: &Array1<f64>, b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn unit_branch() {
        let (y, s) = capnorm_forward(array![1.0, 2.0, 3.0].view());
        assert_eq!(s.mean, 2.0);
        assert!((s.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(s.scale, 1.0);
        assert!(close(&y, &[-1.0, 0.0, 1.0], 1e-15));
    }

    #[test]
    fn scaled_branch() {
        // std = sqrt(32/3); (0 - 4) / sqrt(32/3) = -sqrt(3/2)
        let (y, s) = capnorm_forward(array![0.0, 4.0, 8.0].view());
        assert!((s.std - 3.265986323710904).abs() < 1e-12);
        let e = 1.5f64.sqrt();
        assert!(close(&y, &[-e, 0.0, e], 1e-12));
        assert!((e - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn constant_column() {
        let (y, s) = capnorm_forward(array![5.0, 5.0, 5.0].view());
        assert_eq!(s.std, 0.0);
        assert_eq!(s.scale, 1.0);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_kills_constants_and_scaling_direction() {
        let z = array![1.0, 2.0, 3.0];
        let (_, s) = capnorm_forward(z.view());
        let dz = capnorm_backward(array![1.0, 1.0, 1.0].view(), &s, z.view());
        assert!(dz.iter().all(|v| v.abs() < 1e-15));

        let z = array![0.0, 4.0, 9.0];
        let (y, s) = capnorm_forward(z.view());
        assert!(s.std > 1.0);
        let dz = capnorm_backward((&y * 2.5).view(), &s, z.view());
        assert!(dz.iter().all(|v| v.abs() < 1e-14), "{dz}");
    }

    fn finite_difference_check(z: Array1<f64>, dy: Array1<f64>, bn: bool) {
        let f = |z: &Array1<f64>| -> f64 {
            let stats = if bn {
                batchnorm_stats(z.view())
            } else {
                capnorm_stats(z.view())
            };
            apply(z.view(), &stats).dot(&dy)
        };
        let stats = if bn {
            batchnorm_stats(z.view())
        } else {
            capnorm_stats(z.view())
        };
        let dz = if bn {
            batchnorm_backward(dy.view(), &stats, z.view())
        } else {
            capnorm_backward(dy.view(), &stats, z.view())
        };
        let h = 1e-6;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let numeric = (f(&zp) - f(&zm)) / (2.0 * h);
            assert!((numeric - dz[i]).abs() < 1e-8, "i={i}: {numeric} vs {}", dz[i]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        finite_difference_check(array![0.0, 4.0, 8.0], array![0.3, -1.2, 0.7], false);
        finite_difference_check(array![0.1, 0.5, -0.4, 0.2], array![1.0, 0.0, -2.0, 0.5], false);
        finite_difference_check(array![0.1, 0.5, -0.4, 0.2], array![1.0, 0.0, -2.0, 0.5], true);
    }
}
