use image::RgbImage;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

use super::Plane;

const PSD_TOL: f64 = 1e-6;

fn check(mu: &DVector<f64>, sigma: &DMatrix<f64>, what: &str) -> Result<()> {
    let n = mu.len();
    if sigma.nrows() != n || sigma.ncols() != n {
        return Err(Error::shape(format!("{what}: covariance does not match a {n}-dim mean")));
    }
    if (sigma - sigma.transpose()).amax() > PSD_TOL {
        return Err(Error::Precondition(format!("{what}: covariance is not symmetric")));
    }
    Ok(())
}

/// Symmetric square root with negative eigenvalues clipped.
fn sqrtm_psd(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.iter().any(|&l| l < -PSD_TOL) {
        return Err(Error::Precondition(format!("{what} is not positive semi-definite")));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// `‖μ1−μ2‖² + tr(Σ1 + Σ2 − 2(Σ1Σ2)^½)`, with the trace term taken as
/// `tr (Σ1^½ Σ2 Σ1^½)^½`, which shares the eigenvalues of `(Σ1Σ2)^½`.
pub fn frechet_distance(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    if mu1.len() != mu2.len() {
        return Err(Error::shape(format!("means of dimension {} and {}", mu1.len(), mu2.len())));
    }
    check(mu1, s1, "first Gaussian")?;
    check(mu2, s2, "second Gaussian")?;
    sqrtm_psd(s2, "second covariance")?;
    let r1 = sqrtm_psd(s1, "first covariance")?;
    let inner = &r1 * s2 * &r1;
    let cross = sqrtm_psd(&inner, "covariance product")?.trace();
    let d = mu1 - mu2;
    Ok(d.dot(&d) + s1.trace() + s2.trace() - 2.0 * cross)
}

/// Mean and unbiased covariance of row feature vectors.
pub fn gaussian_fit(features: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = features.len();
    let dim = features.first().map_or(0, Vec::len);
    if n < 2 || dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::Precondition("need at least two equally sized feature vectors".into()));
    }
    let x = DMatrix::from_fn(n, dim, |i, j| features[i][j]);
    let mu = DVector::from_fn(dim, |j, _| x.column(j).mean());
    let centered = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - mu[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mu, cov))
}

/// Image descriptor for the Fréchet distance.
pub trait FeatureExtractor: Sync {
    fn features(&self, img: &RgbImage) -> Result<Vec<f64>>;
}

/// Per-channel intensity histograms of a 64×64 downsample. Distances built on
/// it are not comparable with Inception-based FID values.
#[derive(Clone, Copy, Debug)]
pub struct HistogramFeatures {
    pub bins: usize,
    pub side: usize,
}

impl Default for HistogramFeatures {
    fn default() -> Self {
        Self { bins: 64, side: 64 }
    }
}

impl FeatureExtractor for HistogramFeatures {
    fn features(&self, img: &RgbImage) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 3 * self.bins];
        let norm = (self.side * self.side) as f64;
        for (c, plane) in Plane::channels(img).iter().enumerate() {
            let small = plane.resize(self.side, self.side)?;
            for &v in small.data() {
                let b = ((v * self.bins as f64) as usize).min(self.bins - 1);
                out[c * self.bins + b] += 1.0 / norm;
            }
        }
        Ok(out)
    }
}

/// Fréchet distance between Gaussians fitted to the features of two image sets.
pub fn frechet_of_images(a: &[RgbImage], b: &[RgbImage], extractor: &dyn FeatureExtractor) -> Result<f64> {
    let fa = a.iter().map(|i| extractor.features(i)).collect::<Result<Vec<_>>>()?;
    let fb = b.iter().map(|i| extractor.features(i)).collect::<Result<Vec<_>>>()?;
    let (m1, s1) = gaussian_fit(&fa)?;
    let (m2, s2) = gaussian_fit(&fb)?;
    frechet_distance(&m1, &s1, &m2, &s2)
}
