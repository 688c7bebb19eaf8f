use nalgebra::{DMatrix, SymmetricEigen};

use super::{normalize_in_place, DataError, HsiCube};
use crate::tensor::gemm;

/// Principal axes of a cube's spectral covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `k` unit-length rows of length `bands`, by descending eigenvalue.
    pub components: Vec<Vec<f64>>,
    /// Every covariance eigenvalue, descending.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Fits on every pixel of the cube.
    pub fn fit(cube: &HsiCube, k: usize) -> Result<Self, DataError> {
        let (b, n) = (cube.bands, cube.pixels());
        if k == 0 || k > b {
            return Err(DataError::Parameter(format!("cannot keep {k} components of a {b}-band cube")));
        }
        if n < k + 1 {
            return Err(DataError::Parameter(format!("{k} components need at least {} pixels, cube has {n}", k + 1)));
        }
        let mean: Vec<f64> = (0..b).map(|i| cube.band(i).iter().map(|&v| v as f64).sum::<f64>() / n as f64).collect();
        let centered: Vec<f64> =
            (0..b).flat_map(|i| cube.band(i).iter().map(move |&v| v as f64)).enumerate().map(|(j, v)| v - mean[j / n]).collect();
        let mut cov = vec![0.0; b * b];
        gemm(b, n, b, &centered, false, &centered, true, &mut cov, false);
        let denom = (n - 1) as f64;
        let cov = DMatrix::from_fn(b, b, |i, j| 0.5 * (cov[i * b + j] + cov[j * b + i]) / denom);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]).then(x.cmp(&y)));
        let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let components = order[..k]
            .iter()
            .map(|&i| {
                let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
                if lead < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                v
            })
            .collect();
        Ok(Self { mean, components, eigenvalues })
    }

    /// Share of total variance carried by the kept components.
    pub fn explained_ratio(&self) -> f64 {
        let total: f64 = self.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        let kept: f64 = self.eigenvalues[..self.components.len()].iter().map(|v| v.max(0.0)).sum();
        if total > 0.0 {
            kept / total
        } else {
            0.0
        }
    }

    /// Raw component scores, band-major like a cube.
    pub fn scores(&self, cube: &HsiCube) -> Vec<f64> {
        let n = cube.pixels();
        let mut out = vec![0.0; self.components.len() * n];
        for (c, axis) in self.components.iter().enumerate() {
            let dst = &mut out[c * n..(c + 1) * n];
            for (band, (&w, &mu)) in axis.iter().zip(&self.mean).enumerate() {
                for (d, &v) in dst.iter_mut().zip(cube.band(band)) {
                    *d += w * (v as f64 - mu);
                }
            }
        }
        out
    }

    /// Projects onto the kept axes and min-max scales each component.
    pub fn project(&self, cube: &HsiCube) -> HsiCube {
        let values = self.scores(cube).into_iter().map(|v| v as f32).collect();
        let mut out = HsiCube { height: cube.height, width: cube.width, bands: self.components.len(), values };
        for b in 0..out.bands {
            normalize_in_place(out.band_mut(b));
        }
        out
    }
}

/// Reduces a cube to its top `k` principal components, each scaled to [0, 1].
pub fn pca_reduce(cube: &HsiCube, k: usize) -> Result<(HsiCube, Pca), DataError> {
    let pca = Pca::fit(cube, k)?;
    Ok((pca.project(cube), pca))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_bands_put_all_variance_in_first_component() {
        let base = [0.1f32, 0.9, 0.4, 0.3, 0.7, 0.2];
        let values = (0..4).flat_map(|_| base).collect();
        let cube = HsiCube::new(2, 3, 4, values).unwrap();
        let pca = Pca::fit(&cube, 3).unwrap();
        let s = pca.scores(&cube);
        let var = |c: usize| s[c * 6..(c + 1) * 6].iter().map(|v| v * v).sum::<f64>();
        assert!(var(0) > 0.1);
        assert!(var(1) < 1e-20 && var(2) < 1e-20);
    }

    #[test]
    fn diagonal_line_gives_equal_weight_axis() {
        let xs = [0.0f32, 1.0, 2.0, 3.0, 5.0];
        let values = xs.iter().chain(xs.iter()).copied().collect();
        let cube = HsiCube::new(1, 5, 2, values).unwrap();
        let pca = Pca::fit(&cube, 1).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((pca.components[0][0] - r).abs() < 1e-12);
        assert!((pca.components[0][1] - r).abs() < 1e-12);
    }

    #[test]
    fn axes_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values = (0..6 * 50).map(|_| rng.random::<f32>()).collect();
        let cube = HsiCube::new(5, 10, 6, values).unwrap();
        let pca = Pca::fit(&cube, 3).unwrap();
        for (i, a) in pca.components.iter().enumerate() {
            for (j, b) in pca.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn parameter_errors() {
        let cube = HsiCube::new(1, 3, 2, vec![0.0; 6]).unwrap();
        assert!(matches!(Pca::fit(&cube, 3), Err(DataError::Parameter(_))));
        assert!(matches!(Pca::fit(&cube, 0), Err(DataError::Parameter(_))));
        let tiny = HsiCube::new(1, 2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(Pca::fit(&tiny, 2), Err(DataError::Parameter(_))));
    }
}
