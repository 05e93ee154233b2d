//! Covariance parameter vector: masked relative covariances of the random
//! effects and residual variance ratios.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

/// Smallest eigenvalue allowed in an assembled relative covariance.
pub const MIN_EIGENVALUE: f64 = 1e-8;

/// Symmetric boolean pattern of free covariance entries (diagonal always
/// free).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    p: usize,
    free: Vec<bool>,
}

impl Mask {
    /// All entries free.
    pub fn full(p: usize) -> Self {
        Self {
            p,
            free: alloc::vec![true; p * p],
        }
    }

    pub fn diagonal(p: usize) -> Self {
        Self::from_fn(p, |i, j| i == j)
    }

    /// Entries within a block are zero off the diagonal; entries across
    /// blocks are free. `blocks` lists the block sizes in order.
    pub fn block_orthogonal(blocks: &[usize]) -> Self {
        let mut label = Vec::new();
        for (b, &size) in blocks.iter().enumerate() {
            label.extend(core::iter::repeat_n(b, size));
        }
        Self::from_fn(label.len(), |i, j| i == j || label[i] != label[j])
    }

    pub fn from_fn(p: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut free = alloc::vec![false; p * p];
        for i in 0..p {
            for j in 0..p {
                free[i * p + j] = i == j || (f(i, j) && f(j, i));
            }
        }
        Self { p, free }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn is_free(&self, i: usize, j: usize) -> bool {
        self.free[i * self.p + j]
    }

    /// Free off-diagonal pairs `(i, j)` with `i < j`, row-major.
    pub fn off_diagonal(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.p {
            for j in i + 1..self.p {
                if self.is_free(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Layout of the parameter vector.
///
/// For each random factor: `p` relative standard deviations followed by one
/// correlation-like coefficient per free off-diagonal pair. Then, unless the
/// residual is scalar, `p - 1` log variance ratios of components `2..p`
/// against component 1.
#[derive(Debug, Clone, PartialEq)]
pub struct CovLayout {
    pub p: usize,
    pub masks: Vec<Mask>,
    pub scalar_residual: bool,
}

/// Parameters expanded into matrices.
#[derive(Debug, Clone)]
pub struct Expanded {
    /// Relative covariances (residual-whitened, over sigma^2), one per factor.
    pub relative: Vec<DMatrix<f64>>,
    /// Residual variance ratios, `d[0] == 1`.
    pub ratios: Vec<f64>,
    /// Smallest eigenvalue of each relative covariance before clamping.
    pub min_eigenvalues: Vec<f64>,
}

impl Expanded {
    pub fn clamped(&self) -> bool {
        self.min_eigenvalues.iter().any(|l| *l < MIN_EIGENVALUE)
    }
}

impl CovLayout {
    pub fn new(p: usize, masks: Vec<Mask>, scalar_residual: bool) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidInput("response dimension must be positive".into()));
        }
        if masks.iter().any(|m| m.dim() != p) {
            return Err(Error::InvalidInput("mask dimension differs from response".into()));
        }
        Ok(Self {
            p,
            masks,
            scalar_residual,
        })
    }

    fn factor_len(&self, r: usize) -> usize {
        self.p + self.masks[r].off_diagonal().len()
    }

    pub fn len(&self) -> usize {
        let random: usize = (0..self.masks.len()).map(|r| self.factor_len(r)).sum();
        random + if self.scalar_residual { 0 } else { self.p - 1 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Starting point: random covariances at one tenth of the residual
    /// level, uncorrelated; residual ratios from the component variances.
    pub fn initial(&self, component_variances: &[f64]) -> Vec<f64> {
        let p = self.p;
        let floor = |v: f64| v.max(1e-12);
        let mean = component_variances.iter().map(|v| floor(*v)).sum::<f64>() / p as f64;
        let mut theta = Vec::with_capacity(self.len());
        for r in 0..self.masks.len() {
            for &v in component_variances {
                let rel = if self.scalar_residual { floor(v) / mean } else { 1.0 };
                theta.push((0.1 * rel).sqrt());
            }
            theta.extend(core::iter::repeat_n(0.0, self.masks[r].off_diagonal().len()));
        }
        if !self.scalar_residual {
            let first = floor(component_variances[0]);
            for &v in &component_variances[1..] {
                theta.push((floor(v) / first).ln());
            }
        }
        theta
    }

    /// Relative covariances (masked, shifted to be positive definite) and
    /// residual ratios for `theta`.
    pub fn expand(&self, theta: &[f64]) -> Result<Expanded> {
        if theta.len() != self.len() {
            return Err(Error::InvalidInput("parameter vector has the wrong length".into()));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let p = self.p;
        let mut at = 0;
        let mut relative = Vec::with_capacity(self.masks.len());
        let mut min_eigenvalues = Vec::with_capacity(self.masks.len());
        for mask in &self.masks {
            let sd = &theta[at..at + p];
            at += p;
            let mut xi = DMatrix::zeros(p, p);
            for i in 0..p {
                xi[(i, i)] = sd[i] * sd[i];
            }
            for (i, j) in mask.off_diagonal() {
                let v = sd[i].abs() * sd[j].abs() * theta[at];
                at += 1;
                xi[(i, j)] = v;
                xi[(j, i)] = v;
            }
            let lmin = SymmetricEigen::new(xi.clone())
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            if !lmin.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            if lmin < MIN_EIGENVALUE {
                // a diagonal shift keeps masked entries exactly zero
                let shift = MIN_EIGENVALUE - lmin;
                for i in 0..p {
                    xi[(i, i)] += shift;
                }
            }
            min_eigenvalues.push(lmin);
            relative.push(xi);
        }
        let mut ratios = alloc::vec![1.0; p];
        if !self.scalar_residual {
            for j in 1..p {
                ratios[j] = theta[at].exp();
                at += 1;
            }
            if ratios.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
                return Err(Error::NotPositiveDefinite);
            }
        }
        Ok(Expanded {
            relative,
            ratios,
            min_eigenvalues,
        })
    }
}
