use nalgebra::{DMatrix, SymmetricEigen};

use super::Tensor;
use crate::error::{Error, Result};

/// Result of a principal component analysis.
#[derive(Clone, Debug)]
pub struct Pca {
    /// Column means subtracted before projection.
    pub mean: Vec<f64>,
    /// `dims × cols`, one unit-norm component per row.
    pub components: Tensor,
    /// `rows × dims` coordinates of the input rows.
    pub projections: Tensor,
    /// Covariance eigenvalues for the kept components, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Sum of all covariance eigenvalues.
    pub total_variance: f64,
}

impl Pca {
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= 0.0 {
            return vec![0.0; self.explained_variance.len()];
        }
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    /// Projects an arbitrary vector with the fitted mean and components.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (dims, cols) = self.components.dims2()?;
        if v.len() != cols {
            return Err(Error::shape(format!("project {} into {cols}", v.len())));
        }
        Ok((0..dims)
            .map(|d| {
                self.components
                    .row(d)
                    .iter()
                    .zip(v.iter().zip(&self.mean))
                    .map(|(c, (x, m))| c * (x - m))
                    .sum()
            })
            .collect())
    }

    /// Maps coordinates back into the input space.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (d, &c) in coords.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.components.row(d)) {
                *o += c * w;
            }
        }
        out
    }
}

/// Principal components of the rows of `rows` via eigendecomposition of
/// the sample covariance (normalized by `n - 1`).
///
/// Each component's sign is fixed so that its largest-magnitude entry is
/// positive.
pub fn pca(rows: &Tensor, dims: usize) -> Result<Pca> {
    let (n, cols) = rows.dims2()?;
    if n < 2 {
        return Err(Error::DegenerateInput(format!("pca needs at least 2 rows, got {n}")));
    }
    if dims == 0 || dims > n.min(cols) {
        return Err(Error::InvalidRange(format!(
            "pca dims {dims} must be in 1..={}",
            n.min(cols)
        )));
    }
    let mut mean = vec![0.0; cols];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(rows.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, cols, |i, j| rows.row(i)[j] - mean[j]);
    let (values, vectors) = top_eigenpairs(&centered, dims);
    let total_variance = if cols <= n {
        (centered.transpose() * &centered).trace() / (n as f64 - 1.0)
    } else {
        centered.norm_squared() / (n as f64 - 1.0)
    };

    let mut components = Vec::with_capacity(dims * cols);
    let mut explained_variance = Vec::with_capacity(dims);
    for (value, col) in values.into_iter().zip(vectors) {
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| v * sign));
        explained_variance.push(value.max(0.0));
    }
    let components = Tensor::new(vec![dims, cols], components)?;

    let mut projections = Vec::with_capacity(n * dims);
    for i in 0..n {
        for d in 0..dims {
            let p: f64 = (0..cols).map(|j| centered[(i, j)] * components.row(d)[j]).sum();
            projections.push(p);
        }
    }

    Ok(Pca {
        mean,
        components,
        projections: Tensor::new(vec![n, dims], projections)?,
        explained_variance,
        total_variance,
    })
}

/// Leading `dims` eigenpairs of the sample covariance of `centered`, by
/// eigenvalue descending (ties by index). With more columns than rows the
/// `n × n` Gram matrix is decomposed instead; its nonzero spectrum is the
/// same and `Xᵀu` recovers the covariance eigenvector.
fn top_eigenpairs(centered: &DMatrix<f64>, dims: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (n, cols) = centered.shape();
    let denom = n as f64 - 1.0;
    let gram = cols > n;
    let m = if gram {
        centered * centered.transpose() / denom
    } else {
        centered.transpose() * centered / denom
    };
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let largest = order.first().map_or(0.0, |&i| eig.eigenvalues[i].max(0.0));
    let mut values = Vec::with_capacity(dims);
    let mut vectors = Vec::with_capacity(dims);
    for &idx in order.iter().take(dims) {
        let u = eig.eigenvectors.column(idx);
        let v: Vec<f64> = if gram {
            // Xᵀu is pure rounding noise for a null direction of the data,
            // so such components are left zero
            if eig.eigenvalues[idx] <= 1e-12 * largest {
                vec![0.0; cols]
            } else {
                let w = centered.transpose() * u;
                let norm = w.norm();
                w.iter().map(|x| x / norm).collect()
            }
        } else {
            u.iter().copied().collect()
        };
        values.push(eig.eigenvalues[idx]);
        vectors.push(v);
    }
    (values, vectors)
}
