//! Radial-angular decomposition of a fan-in gradient and norm-preserving rotation.

use ndarray::{Array1, ArrayView1, ArrayViewMut1, Zip};

use crate::error::{Error, Result};

/// Orthogonal parts below this fraction of the gradient norm are indistinguishable from rounding
/// noise (in one dimension they are nothing else) and are folded into the radial part.
const ORTHOGONAL_NOISE: f64 = 1e-12;

/// Tolerance on `|direction · w| / (‖direction‖ ‖w‖)` accepted by [`rotate`].
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// Splits `g` into `r`, parallel to `w`, and `φ`, orthogonal to it, with `g = r + φ`. A zero `w`
/// has no direction: `r = 0` and `φ = g`.
pub fn decompose_radial_angular(w: ArrayView1<f64>, g: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
    let ww = w.dot(&w);
    if ww == 0.0 {
        return (Array1::zeros(g.len()), g.to_owned());
    }
    let mut phi = g.to_owned();
    phi.scaled_add(-g.dot(&w) / ww, &w);
    // A second projection removes the parallel residue left by cancellation.
    let residue = phi.dot(&w) / ww;
    phi.scaled_add(-residue, &w);
    if phi.dot(&phi).sqrt() <= ORTHOGONAL_NOISE * g.dot(&g).sqrt() {
        return (g.to_owned(), Array1::zeros(g.len()));
    }
    (&g - &phi, phi)
}

fn check_orthogonal(w: ArrayView1<f64>, direction: ArrayView1<f64>) -> Result<()> {
    let scale = w.dot(&w).sqrt() * direction.dot(&direction).sqrt();
    if scale == 0.0 {
        return Ok(());
    }
    let cos = w.dot(&direction).abs() / scale;
    if cos > ORTHOGONALITY_TOL {
        return Err(Error::NotOrthogonal(cos));
    }
    Ok(())
}

/// In-place `w ← cos(θ)·w + sin(θ)·‖w‖·direction`. `direction` must be a unit vector orthogonal
/// to `w`; the length of `w` is preserved and a zero `w` is left alone.
pub fn rotate_in_place(mut w: ArrayViewMut1<f64>, direction: ArrayView1<f64>, angle: f64) -> Result<()> {
    let norm = w.dot(&w).sqrt();
    if norm == 0.0 || angle == 0.0 {
        return Ok(());
    }
    check_orthogonal(w.view(), direction)?;
    let (s, c) = angle.sin_cos();
    let k = s * norm;
    Zip::from(&mut w).and(&direction).for_each(|x, &d| *x = c * *x + k * d);
    Ok(())
}

pub fn rotate(w: ArrayView1<f64>, direction: ArrayView1<f64>, angle: f64) -> Result<Array1<f64>> {
    let mut out = w.to_owned();
    rotate_in_place(out.view_mut(), direction, angle)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn decomposition_examples() {
        let (r, p) = decompose_radial_angular(array![1.0, 0.0].view(), array![2.0, 3.0].view());
        assert_eq!((r, p), (array![2.0, 0.0], array![0.0, 3.0]));
        let (r, p) = decompose_radial_angular(array![1.0, 1.0].view(), array![1.0, 0.0].view());
        assert_eq!((r, p), (array![0.5, 0.5], array![0.5, -0.5]));
        let (r, p) = decompose_radial_angular(array![0.0, 0.0].view(), array![1.0, 2.0].view());
        assert_eq!((r, p), (array![0.0, 0.0], array![1.0, 2.0]));
    }

    #[test]
    fn one_dimensional_gradients_are_purely_radial() {
        let (r, p) = decompose_radial_angular(array![0.3].view(), array![-1.7].view());
        assert_eq!(r, array![-1.7]);
        assert_eq!(p, array![0.0]);
    }

    #[test]
    fn rotation_examples() {
        let w = rotate(array![2.0, 0.0].view(), array![0.0, 1.0].view(), PI / 2.0).unwrap();
        assert!((w[0]).abs() < 1e-15 && (w[1] - 2.0).abs() < 1e-15);
        let w = rotate(array![1.0, 0.0].view(), array![0.0, 1.0].view(), PI / 4.0).unwrap();
        let h = 2f64.sqrt() / 2.0;
        assert!((w[0] - h).abs() < 1e-15 && (w[1] - h).abs() < 1e-15);
        assert_eq!(
            rotate(array![1.0, 2.0].view(), array![0.0, 0.0].view(), 0.0).unwrap(),
            array![1.0, 2.0]
        );
        assert_eq!(
            rotate(array![0.0, 0.0].view(), array![0.0, 1.0].view(), 1.0).unwrap(),
            array![0.0, 0.0]
        );
        assert!(matches!(
            rotate(array![1.0, 0.0].view(), array![0.6, 0.8].view(), 0.1),
            Err(Error::NotOrthogonal(_))
        ));
    }

    proptest! {
        #[test]
        fn decomposition_reconstructs_and_is_orthogonal(
            w in prop::collection::vec(-3.0f64..3.0, 2..7),
            g in prop::collection::vec(-3.0f64..3.0, 7),
        ) {
            let w = Array1::from(w);
            let g = Array1::from(g[..w.len()].to_vec());
            let (r, p) = decompose_radial_angular(w.view(), g.view());
            for k in 0..g.len() {
                prop_assert!((r[k] + p[k] - g[k]).abs() <= 1e-12);
            }
            let wn = w.dot(&w).sqrt();
            let pn = p.dot(&p).sqrt();
            if wn > 1e-6 && pn > 0.0 {
                prop_assert!(p.dot(&w).abs() / (pn * wn) < 1e-12);
            }
        }

        #[test]
        fn rotation_preserves_length(w in prop::collection::vec(-3.0f64..3.0, 3), angle in 0.0f64..10.0) {
            let w = Array1::from(w);
            // Any vector orthogonal to w works as a direction.
            let (_, d) = decompose_radial_angular(w.view(), array![1.0, -2.0, 0.5].view());
            let dn = d.dot(&d).sqrt();
            prop_assume!(dn > 1e-6);
            let d = d / dn;
            let out = rotate(w.view(), d.view(), angle).unwrap();
            let before = w.dot(&w).sqrt();
            prop_assert!((out.dot(&out).sqrt() - before).abs() <= 1e-12 * before.max(1.0));
        }
    }
}
