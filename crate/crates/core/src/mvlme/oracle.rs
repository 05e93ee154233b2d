//! Dense reference evaluations of the restricted likelihood, for checking
//! the structured computation on small problems.
//!
//! The marginal covariance of `vec(A)` is built explicitly, the fixed
//! effects are removed with an orthonormal basis `K` of the residual space,
//! and the deviance of the contrasts `K^T vec(A)` is evaluated directly.

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;

use super::cov::CovLayout;
use super::ModelSpec;
use crate::error::{Error, Result};

/// Largest `N p` accepted.
pub const DENSE_LIMIT: usize = 5000;

fn check(spec: &ModelSpec, a: &DMatrix<f64>) -> Result<()> {
    let size = spec.n() * a.ncols();
    if size > DENSE_LIMIT {
        return Err(Error::TooLarge(size));
    }
    Ok(())
}

/// Marginal covariance of `vec(A)` (component-major) relative to `sigma^2`.
fn marginal(spec: &ModelSpec, layout: &CovLayout, theta: &[f64]) -> Result<DMatrix<f64>> {
    let e = layout.expand(theta)?;
    let n = spec.n();
    let p = layout.p;
    let root: Vec<f64> = e.ratios.iter().map(|d| d.sqrt()).collect();
    let mut lambda = DMatrix::zeros(n * p, n * p);
    for j in 0..p {
        for i in 0..n {
            lambda[(j * n + i, j * n + i)] += e.ratios[j];
        }
    }
    for (f, xi) in spec.factors.iter().zip(&e.relative) {
        for j in 0..p {
            for j2 in 0..p {
                let s = root[j] * root[j2] * xi[(j, j2)];
                if s == 0.0 {
                    continue;
                }
                for i in 0..n {
                    for i2 in 0..n {
                        if f.index[i] == f.index[i2] {
                            lambda[(j * n + i, j2 * n + i2)] += s;
                        }
                    }
                }
            }
        }
    }
    Ok(lambda)
}

/// Orthonormal basis of the orthogonal complement of the columns of `x`.
pub fn residual_basis(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let xtx = x.transpose() * x;
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| Error::RankDeficientDesign(Vec::new()))?;
    let proj = DMatrix::identity(n, n) - x * inv * x.transpose();
    let proj = (&proj + proj.transpose()) * 0.5;
    let eig = SymmetricEigen::new(proj);
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    Ok(DMatrix::from_fn(n, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])]))
}

/// Restricted deviance with `sigma^2` profiled out, evaluated densely.
///
/// Differs from [`super::ProfiledDeviance::deviance`] by a constant that
/// does not depend on `theta`.
pub fn dense_reml_deviance(spec: &ModelSpec, a: &DMatrix<f64>, layout: &CovLayout, theta: &[f64]) -> Result<f64> {
    check(spec, a)?;
    let n = spec.n();
    let p = a.ncols();
    let kx = residual_basis(&spec.x)?;
    let m = kx.ncols();
    let lambda = marginal(spec, layout, theta)?;

    let mut psi = DMatrix::zeros(m * p, m * p);
    for j in 0..p {
        for j2 in 0..p {
            let block = lambda.view((j * n, j2 * n), (n, n));
            let kb = kx.transpose() * block * &kx;
            psi.view_mut((j * m, j2 * m), (m, m)).copy_from(&kb);
        }
    }
    let mut omega = DVector::zeros(m * p);
    for j in 0..p {
        let o = kx.transpose() * a.column(j);
        omega.rows_mut(j * m, m).copy_from(&o);
    }
    let chol = Cholesky::new(psi).ok_or(Error::NotPositiveDefinite)?;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = omega.dot(&chol.solve(&omega));
    let df = (m * p) as f64;
    let sigma2 = quad / df;
    Ok(df * ((2.0 * core::f64::consts::PI).ln() + 1.0 + sigma2.ln()) + logdet)
}

/// Generalized least-squares fixed effects (`k x p`) under the marginal
/// covariance implied by `theta`.
pub fn dense_gls_fixed(spec: &ModelSpec, a: &DMatrix<f64>, layout: &CovLayout, theta: &[f64]) -> Result<DMatrix<f64>> {
    check(spec, a)?;
    let n = spec.n();
    let k = spec.k();
    let p = a.ncols();
    let lambda = marginal(spec, layout, theta)?;
    let chol = Cholesky::new(lambda).ok_or(Error::NotPositiveDefinite)?;
    let mut xbar = DMatrix::zeros(n * p, k * p);
    for j in 0..p {
        xbar.view_mut((j * n, j * k), (n, k)).copy_from(&spec.x);
    }
    let y = DVector::from_iterator(n * p, (0..p).flat_map(|j| a.column(j).iter().copied().collect::<Vec<_>>()));
    let wx = chol.solve(&xbar);
    let wy = chol.solve(&y);
    let lhs = xbar.transpose() * wx;
    let rhs = xbar.transpose() * wy;
    let b = Cholesky::new(lhs).ok_or(Error::NotPositiveDefinite)?.solve(&rhs);
    Ok(DMatrix::from_fn(k, p, |l, j| b[j * k + l]))
}
