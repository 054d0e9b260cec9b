use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

/// Principal-component projection fitted on a set of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit eigenvectors by descending eigenvalue; first nonzero coordinate
    /// of each is positive.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// Projections of the fitted vectors.
    pub points: Vec<Vec<f64>>,
}

impl Pca {
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(v)
                    .zip(&self.mean)
                    .map(|((c, x), m)| c * (x - m))
                    .sum()
            })
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &a) in self.components.iter().zip(coords) {
            for (o, ci) in out.iter_mut().zip(c) {
                *o += a * ci;
            }
        }
        out
    }
}

/// Centers, eigendecomposes the sample covariance, and projects onto the
/// top `k` directions.
pub fn pca_project<V: AsRef<[f64]>>(vectors: &[V], k: usize) -> Result<Pca> {
    let n = vectors.len();
    if n < k + 1 {
        return Err(Error::Rank(format!("{n} vectors cannot support {k} components")));
    }
    let m = vectors[0].as_ref().len();
    if k == 0 || k > m {
        return Err(Error::Rank(format!("{k} components requested in dimension {m}")));
    }
    if let Some(v) = vectors.iter().find(|v| v.as_ref().len() != m) {
        return Err(Error::Dimension(format!(
            "vector of length {} among length {m}",
            v.as_ref().len()
        )));
    }
    let mut mean = vec![0.0; m];
    for v in vectors {
        for (a, x) in mean.iter_mut().zip(v.as_ref()) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    let centered = DMatrix::from_fn(n, m, |i, j| vectors[i].as_ref()[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    let mut components = Vec::with_capacity(k);
    let mut explained_variance_ratio = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut c: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        if c.iter().find(|&&x| x != 0.0).is_some_and(|&x| x < 0.0) {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(c);
        let l = eig.eigenvalues[i].max(0.0);
        explained_variance_ratio.push(if total > 0.0 { l / total } else { 0.0 });
    }
    let basis = DMatrix::from_fn(m, k, |r, c| components[c][r]);
    let proj = &centered * basis;
    let points = (0..n).map(|i| proj.row(i).iter().copied().collect()).collect();
    Ok(Pca {
        mean,
        components,
        explained_variance_ratio,
        points,
    })
}
