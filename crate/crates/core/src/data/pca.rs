use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Principal components of row vectors. Basis vectors are orthonormal and
/// signed so their largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    mean: Vec<f64>,
    /// `k` rows of length `d`.
    basis: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl Pca {
    /// Fits the top `k` components of `rows` (`m` vectors of length `d`).
    pub fn fit(rows: &[Vec<f64>], k: usize) -> Result<Self> {
        let m = rows.len();
        if m <= k {
            return Err(Error::invalid(format!("PCA needs more than {k} samples, got {m}")));
        }
        let d = rows[0].len();
        if d < k {
            return Err(Error::invalid(format!("cannot keep {k} components of {d}-dim data")));
        }
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("PCA rows differ in length"));
        }
        let mut mean = vec![0.0; d];
        for r in rows {
            for (a, v) in mean.iter_mut().zip(r) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        let x = DMatrix::from_fn(m, d, |i, j| rows[i][j] - mean[j]);
        let denom = (m - 1) as f64;

        let (values, vectors) = if d <= m {
            let cov = (x.transpose() * &x) / denom;
            let eig = SymmetricEigen::new(cov);
            (eig.eigenvalues, eig.eigenvectors)
        } else {
            // Wide data: eigenvectors of the m x m Gram matrix mapped back.
            let gram = (&x * x.transpose()) / denom;
            let eig = SymmetricEigen::new(gram);
            let mut v = x.transpose() * &eig.eigenvectors;
            for mut col in v.column_iter_mut() {
                let norm = col.norm();
                if norm > 0.0 {
                    col /= norm;
                }
            }
            (eig.eigenvalues, v)
        };
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let mut basis = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for &i in order.iter().take(k) {
            let mut v: Vec<f64> = vectors.column(i).iter().copied().collect();
            let lead = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |best, (j, &x)| if x.abs() > best.1.abs() { (j, x) } else { best })
                .0;
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            basis.push(v);
            variances.push(values[i].max(0.0));
        }
        Ok(Pca { mean, basis, variances })
    }

    /// Rebuilds a fitted PCA from its stored mean, basis rows and variances.
    pub fn from_parts(mean: Vec<f64>, basis: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if basis.is_empty() || basis.len() != variances.len() || basis.iter().any(|b| b.len() != mean.len()) {
            return Err(Error::invalid("PCA parts disagree in size"));
        }
        Ok(Pca { mean, basis, variances })
    }

    pub fn components(&self) -> usize {
        self.basis.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    /// Variance captured by each component (descending).
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// `V^T (x - mean)`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "PCA expects {}-dim vectors, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self
            .basis
            .iter()
            .map(|v| v.iter().zip(x).zip(&self.mean).map(|((a, b), m)| a * (b - m)).sum())
            .collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (v, &c) in self.basis.iter().zip(z) {
            for (o, &b) in out.iter_mut().zip(v) {
                *o += c * b;
            }
        }
        out
    }
}
