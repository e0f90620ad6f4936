//! Per-patch ZCA whitening with rows as observations and columns as variables.

use nalgebra::{DMatrix, SymmetricEigen};

use super::FeatureError;
use crate::grid::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZcaSpec {
    pub epsilon: f64,
}

impl Default for ZcaSpec {
    fn default() -> Self {
        Self { epsilon: 1e-5 }
    }
}

fn to_matrix(img: &ImageGrid) -> DMatrix<f64> {
    DMatrix::from_row_slice(img.height(), img.width(), img.data())
}

/// Returns `X W` with `X` the column-centred image and
/// `W = U (L + eps I)^(-1/2) U^T` built from the column covariance `U L U^T`.
pub fn zca_whiten_raw(img: &ImageGrid, spec: &ZcaSpec) -> Result<ImageGrid, FeatureError> {
    if img.channels() != 1 {
        return Err(FeatureError::NotGrayscale(img.channels()));
    }
    if img.height() < 2 {
        return Err(FeatureError::TooSmall {
            min: 2,
            height: img.height(),
            width: img.width(),
        });
    }
    if !(spec.epsilon > 0.0) {
        return Err(FeatureError::InvalidParameter("zca epsilon must be positive"));
    }
    let (rows, cols) = (img.height(), img.width());
    let mut x = to_matrix(img);
    for mut column in x.column_iter_mut() {
        let mean = column.mean();
        column.add_scalar_mut(-mean);
    }
    let cov = x.transpose() * &x / (rows - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let inv_sqrt = eig
        .eigenvalues
        .map(|l| 1.0 / (l.max(0.0) + spec.epsilon).sqrt());
    let u = &eig.eigenvectors;
    let w = u * DMatrix::from_diagonal(&inv_sqrt) * u.transpose();
    let out = x * w;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        data.extend(out.row(r).iter());
    }
    Ok(ImageGrid::from_vec(rows, cols, 1, data)?)
}

/// ZCA-whitened patch rescaled to [0, 1] for use as an input channel.
pub fn zca_whiten(img: &ImageGrid, spec: &ZcaSpec) -> Result<ImageGrid, FeatureError> {
    let raw = zca_whiten_raw(img, spec)?;
    Ok(rescale_unit(&raw))
}

pub(crate) fn rescale_unit(img: &ImageGrid) -> ImageGrid {
    let (lo, hi) = img.channel_range(0);
    if hi > lo {
        img.map(|v| (v - lo) / (hi - lo))
    } else {
        img.map(|_| 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Covariance of the columns, computed directly from the definition.
    fn column_covariance(img: &ImageGrid) -> Vec<Vec<f64>> {
        let (n, m) = (img.height(), img.width());
        let means: Vec<f64> = (0..m)
            .map(|j| (0..n).map(|i| img.get(i, j, 0)).sum::<f64>() / n as f64)
            .collect();
        (0..m)
            .map(|a| {
                (0..m)
                    .map(|b| {
                        (0..n)
                            .map(|i| (img.get(i, a, 0) - means[a]) * (img.get(i, b, 0) - means[b]))
                            .sum::<f64>()
                            / (n - 1) as f64
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn tall_random_input_is_decorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = ImageGrid::from_fn(40, 6, 1, |_, x, _| rng.gen::<f64>() * (x + 1) as f64);
        // correlate neighbouring columns
        let img = ImageGrid::from_fn(40, 6, 1, |y, x, _| {
            img.get(y, x, 0) + 0.8 * img.get(y, (x + 1) % 6, 0)
        });
        let out = zca_whiten_raw(&img, &ZcaSpec { epsilon: 1e-10 }).unwrap();
        let cov = column_covariance(&out);
        for a in 0..6 {
            for b in 0..6 {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((cov[a][b] - expect).abs() < 1e-6, "cov[{a}][{b}] = {}", cov[a][b]);
            }
        }
    }

    #[test]
    fn identity_covariance_leaves_centred_input() {
        // columns: orthogonal +-1 patterns, zero mean, unit sample variance
        let h = [1.0, 1.0, -1.0, -1.0];
        let k = [1.0, -1.0, 1.0, -1.0];
        let s = (3.0f64 / 4.0).sqrt();
        let img = ImageGrid::from_fn(4, 2, 1, |y, x, _| if x == 0 { h[y] * s } else { k[y] * s } + 10.0);
        let eps = 1e-8;
        let out = zca_whiten_raw(&img, &ZcaSpec { epsilon: eps }).unwrap();
        for y in 0..4 {
            for x in 0..2 {
                assert!((out.get(y, x, 0) - (img.get(y, x, 0) - 10.0)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn two_by_two_is_identity_on_range() {
        let img = ImageGrid::from_vec(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = zca_whiten_raw(&img, &ZcaSpec { epsilon: 1e-10 }).unwrap();
        let cov = column_covariance(&out);
        // closed form: centred columns are both (-1, 1), covariance [[2,2],[2,2]],
        // range spanned by u = (1,1)/sqrt(2)
        let u = [1.0 / 2f64.sqrt(); 2];
        let q: f64 = (0..2)
            .map(|a| (0..2).map(|b| u[a] * cov[a][b] * u[b]).sum::<f64>())
            .sum();
        assert!((q - 1.0).abs() < 1e-6);
        let v = [1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()];
        let n: f64 = (0..2)
            .map(|a| (0..2).map(|b| v[a] * cov[a][b] * v[b]).sum::<f64>())
            .sum();
        assert!(n.abs() < 1e-6);
    }

    #[test]
    fn shift_invariant_and_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = ImageGrid::from_fn(12, 12, 1, |_, _, _| rng.gen::<f64>());
        let shifted = img.map(|v| v + 3.5);
        let spec = ZcaSpec::default();
        let a = zca_whiten(&img, &spec).unwrap();
        let b = zca_whiten(&shifted, &spec).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-9);
            assert!((0.0..=1.0).contains(p));
        }
        assert_eq!(a.shape(), img.shape());
    }

    #[test]
    fn rejects_color_and_single_row() {
        let rgb = ImageGrid::zeros(4, 4, 3);
        assert!(matches!(
            zca_whiten(&rgb, &ZcaSpec::default()),
            Err(FeatureError::NotGrayscale(3))
        ));
        let row = ImageGrid::zeros(1, 4, 1);
        assert!(zca_whiten(&row, &ZcaSpec::default()).is_err());
    }
}
