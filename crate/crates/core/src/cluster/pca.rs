use serde::{Deserialize, Serialize};

use crate::linalg::{axpy, dot, symmetric_eigen, Matrix};
use crate::{Error, Result, Scalar};

/// Fitted principal component projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca<T> {
    pub mean: Vec<T>,
    /// Principal directions as columns (`D x d_out`), orthonormal.
    pub basis: Matrix<T>,
    /// Covariance eigenvalue of each retained direction.
    pub variances: Vec<T>,
    /// Sum of all covariance eigenvalues.
    pub total_variance: T,
}

impl<T: Scalar> Pca<T> {
    pub fn transform(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.mean.len() {
            return Err(Error::Precondition(format!(
                "input has {} columns, projection expects {}",
                x.cols(),
                self.mean.len()
            )));
        }
        let d_out = self.basis.cols();
        let bt = self.basis.transpose();
        let mut out = Matrix::zeros(x.rows(), d_out);
        let mut centered = vec![T::zero(); x.cols()];
        for i in 0..x.rows() {
            for ((c, &v), &m) in centered.iter_mut().zip(x.row(i)).zip(&self.mean) {
                *c = v - m;
            }
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = dot(bt.row(j), &centered);
            }
        }
        Ok(out)
    }

    /// Fraction of total variance captured by the retained directions.
    pub fn explained_ratio(&self) -> T {
        if self.total_variance <= T::zero() {
            return T::one();
        }
        self.variances.iter().copied().sum::<T>() / self.total_variance
    }
}

/// Fits the top `d_out` principal directions of `x` and projects onto them.
pub fn pca_fit_transform<T: Scalar>(x: &Matrix<T>, d_out: usize) -> Result<(Pca<T>, Matrix<T>)> {
    let (n, d) = (x.rows(), x.cols());
    if d_out == 0 || d_out > n.min(d) {
        return Err(Error::Precondition(format!(
            "cannot keep {d_out} components of a {n}x{d} matrix"
        )));
    }
    let mean = x.column_means();
    let mut cov = Matrix::zeros(d, d);
    let mut c = vec![T::zero(); d];
    for row in x.row_iter() {
        for ((ci, &v), &m) in c.iter_mut().zip(row).zip(&mean) {
            *ci = v - m;
        }
        for a in 0..d {
            if c[a] != T::zero() {
                axpy(c[a], &c[..=a], &mut cov.row_mut(a)[..=a]);
            }
        }
    }
    let denom = T::of_usize(n.saturating_sub(1).max(1));
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let eig = symmetric_eigen(&cov)?;
    let total_variance = eig.values.iter().map(|v| v.max(T::zero())).sum();
    let basis = eig.vectors.truncate_cols(d_out);
    let variances = eig.values[..d_out].iter().map(|v| v.max(T::zero())).collect();
    let pca = Pca {
        mean,
        basis,
        variances,
        total_variance,
    };
    let y = pca.transform(x)?;
    Ok((pca, y))
}
