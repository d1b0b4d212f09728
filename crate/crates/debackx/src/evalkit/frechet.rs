//! Fréchet distance between feature Gaussians:
//! d^2 = ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2(Sa Sb)^(1/2)),
//! with the matrix square root taken via symmetric eigendecomposition.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::neural::frozen::FrozenFeatureNet;

#[derive(Debug, Clone)]
pub struct FeatureGaussian {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

/// Jacobi eigendecomposition of a symmetric matrix: returns
/// (eigenvalues, eigenvectors as columns) with A = V diag(w) V^T.
fn jacobi_eigh(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.dim().0;
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if m[(p, q)].abs() < 1e-30 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let w = Array1::from_iter((0..n).map(|i| m[(i, i)]));
    (w, v)
}

/// Symmetric PSD square root; tiny negative eigenvalues are clipped.
fn sqrtm_psd(a: &Array2<f64>) -> Array2<f64> {
    let sym = (a + &a.t()) * 0.5;
    let (w, v) = jacobi_eigh(&sym);
    let n = w.len();
    let mut out = Array2::zeros((n, n));
    for k in 0..n {
        let s = w[k].max(0.0).sqrt();
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += s * v[(i, k)] * v[(j, k)];
            }
        }
    }
    out
}

pub fn frechet_distance(a: &FeatureGaussian, b: &FeatureGaussian) -> Result<f64> {
    if a.mean.len() != b.mean.len() || a.cov.dim() != b.cov.dim() {
        return Err(Error::Input(format!(
            "gaussian dims differ: {} vs {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let dmu: f64 = a
        .mean
        .iter()
        .zip(b.mean.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    // sqrt(Sa Sb) computed via the symmetric form:
    // Tr((Sa Sb)^1/2) = Tr((Sa^1/2 Sb Sa^1/2)^1/2).
    let sa_half = sqrtm_psd(&a.cov);
    let inner = sa_half.dot(&b.cov).dot(&sa_half);
    let cross = sqrtm_psd(&inner);
    let trace = a.cov.diag().sum() + b.cov.diag().sum() - 2.0 * cross.diag().sum();
    Ok((dmu + trace).max(0.0))
}

/// Pool the frozen net's final tap to one 64-vector per image, then fit
/// mean and unbiased covariance with shrinkage 1e-6 * I.
pub fn embed_images(images: &[Image], net: &FrozenFeatureNet) -> Result<FeatureGaussian> {
    if images.len() < 2 {
        return Err(Error::Input(format!(
            "covariance needs at least 2 images, got {}",
            images.len()
        )));
    }
    let mut feats: Vec<Array1<f64>> = Vec::with_capacity(images.len());
    for img in images {
        let taps = net.taps(img)?;
        let last = taps.last().unwrap();
        let (pos, d) = last.dim();
        let mut pooled = Array1::zeros(d);
        for p in 0..pos {
            for c in 0..d {
                pooled[c] += last[(p, c)];
            }
        }
        pooled.mapv_inplace(|v| v / pos as f64);
        feats.push(pooled);
    }
    let d = feats[0].len();
    let n = feats.len() as f64;
    let mut mean = Array1::zeros(d);
    for f in &feats {
        mean += f;
    }
    mean.mapv_inplace(|v| v / n);
    let mut cov = Array2::zeros((d, d));
    for f in &feats {
        let c = f - &mean;
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    cov.mapv_inplace(|v| v / (n - 1.0));
    for i in 0..d {
        cov[(i, i)] += 1e-6;
    }
    Ok(FeatureGaussian { mean, cov })
}
