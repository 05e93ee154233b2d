//! Functional principal components for the amplitude and phase processes.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::quad::{cell_midpoints, interp_uniform, trapezoid_weights, uniform_grid};
use crate::register::{invert_warp, WarpingFunction};
use crate::simplex::clr_inverse;

/// Default amplitude threshold (Hz) for component selection.
pub const AMPLITUDE_JND: f64 = 10.0;
/// Default phase threshold (relative tempo distortion).
pub const PHASE_JND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Process {
    Amplitude,
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeviationMetric {
    /// `sqrt(lambda) * sup |phi|`
    #[default]
    Peak,
    /// `sqrt(lambda)`
    Rms,
}

/// Mean function, eigenfunctions and eigenvalues of one process.
///
/// Eigenfunctions are orthonormal under the quadrature `weights`, cover the
/// whole sample space (zero-variance directions included) and are sorted by
/// nonincreasing eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

/// Quadrature for a process: trapezoidal weights on the `m + 1` grid points
/// for amplitude, cell widths `1/m` on the cell midpoints for phase.
pub fn process_quadrature(process: Process, len: usize) -> (Vec<f64>, Vec<f64>) {
    match process {
        Process::Amplitude => {
            let grid = uniform_grid(len);
            let w = trapezoid_weights(&grid);
            (grid, w)
        }
        Process::Phase => {
            let grid = cell_midpoints(&uniform_grid(len + 1));
            (grid, alloc::vec![1.0 / len as f64; len])
        }
    }
}

/// FPCA of a process sampled on its natural grid (see [`process_quadrature`]).
pub fn fit_process(process: Process, samples: &[Vec<f64>]) -> Result<EigenBasis> {
    let len = samples.first().map_or(0, Vec::len);
    let (grid, weights) = process_quadrature(process, len);
    fit_fpca(samples, &grid, &weights)
}

/// Sample mean, covariance (divisor `N - 1`) and eigendecomposition of the
/// quadrature-weighted covariance operator.
pub fn fit_fpca(samples: &[Vec<f64>], grid: &[f64], weights: &[f64]) -> Result<EigenBasis> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::DegenerateSample(n));
    }
    let len = grid.len();
    if weights.len() != len {
        return Err(Error::GridMismatch {
            expected: len,
            found: weights.len(),
        });
    }
    if let Some(s) = samples.iter().find(|s| s.len() != len) {
        return Err(Error::GridMismatch {
            expected: len,
            found: s.len(),
        });
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidInput("quadrature weights must be positive".into()));
    }

    let mut mean = alloc::vec![0.0; len];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let root: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let centered = DMatrix::from_fn(n, len, |i, j| (samples[i][j] - mean[j]) * root[j]);
    let op = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let op = (&op + op.transpose()) * 0.5;
    let eig = SymmetricEigen::new(op);

    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut eigenvalues = Vec::with_capacity(len);
    let mut eigenfunctions = Vec::with_capacity(len);
    for &k in &order {
        eigenvalues.push(eig.eigenvalues[k].max(0.0));
        let mut phi: Vec<f64> = (0..len).map(|j| eig.eigenvectors[(j, k)] / root[j]).collect();
        let peak = phi
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) })
            .0;
        if phi[peak] < 0.0 {
            phi.iter_mut().for_each(|v| *v = -*v);
        }
        eigenfunctions.push(phi);
    }
    Ok(EigenBasis {
        grid: grid.to_vec(),
        weights: weights.to_vec(),
        mean,
        eigenfunctions,
        eigenvalues,
    })
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    fn check(&self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.grid.len() {
            return Err(Error::GridMismatch {
                expected: self.grid.len(),
                found: sample.len(),
            });
        }
        Ok(())
    }

    /// Scores of `sample` on the first `count` components.
    pub fn project(&self, sample: &[f64], count: usize) -> Result<Vec<f64>> {
        self.check(sample)?;
        Ok(self.eigenfunctions[..count.min(self.len())]
            .iter()
            .map(|phi| {
                (0..sample.len())
                    .map(|j| self.weights[j] * (sample[j] - self.mean[j]) * phi[j])
                    .sum()
            })
            .collect())
    }

    /// `mean + sum_p scores[p] * phi_p`, using as many components as scores.
    pub fn evaluate(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() > self.len() {
            return Err(Error::InvalidInput("more scores than components".into()));
        }
        let mut out = self.mean.clone();
        for (a, phi) in scores.iter().zip(&self.eigenfunctions) {
            for (o, p) in out.iter_mut().zip(phi) {
                *o += a * p;
            }
        }
        Ok(out)
    }

    pub fn deviations(&self, metric: DeviationMetric) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .zip(&self.eigenfunctions)
            .map(|(l, phi)| {
                let sd = l.sqrt();
                match metric {
                    DeviationMetric::Rms => sd,
                    DeviationMetric::Peak => sd * phi.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                }
            })
            .collect()
    }
}

/// Number of components whose perceptual deviation reaches `threshold`
/// (at least one). Phase deviations are log-derivative units and are
/// mapped to relative tempo change with `exp(d) - 1` first.
pub fn select_from_deviations(deviations: &[f64], process: Process, threshold: f64) -> usize {
    let count = deviations
        .iter()
        .filter(|&&d| {
            let effect = match process {
                Process::Amplitude => d,
                Process::Phase => d.exp() - 1.0,
            };
            effect >= threshold
        })
        .count();
    count.max(1)
}

pub fn select_components(
    basis: &EigenBasis,
    process: Process,
    threshold: f64,
    metric: DeviationMetric,
) -> usize {
    select_from_deviations(&basis.deviations(metric), process, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceShare {
    pub percent: f64,
    pub cumulative: f64,
}

/// Percentage of total variance carried by each component.
pub fn variance_table(eigenvalues: &[f64]) -> Vec<VarianceShare> {
    let total: f64 = eigenvalues.iter().sum();
    let mut cumulative = 0.0;
    eigenvalues
        .iter()
        .map(|l| {
            let percent = if total > 0.0 { 100.0 * l / total } else { 0.0 };
            cumulative += percent;
            VarianceShare {
                percent,
                cumulative,
            }
        })
        .collect()
}

/// A curve rebuilt from amplitude and phase scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Physical time of each grid point, in the duration's units.
    pub times: Vec<f64>,
    pub w: Vec<f64>,
    pub h: WarpingFunction,
    pub y: Vec<f64>,
}

/// Rebuilds `y(t) = w(h^{-1}(t / T))` on the grid from truncated expansions
/// of the registered curve `w` and the CLR coordinates of `h`.
pub fn reconstruct(
    amplitude: &EigenBasis,
    amplitude_scores: &[f64],
    phase: &EigenBasis,
    phase_scores: &[f64],
    duration: f64,
) -> Result<Reconstruction> {
    let points = amplitude.grid.len();
    if phase.grid.len() + 1 != points {
        return Err(Error::GridMismatch {
            expected: points - 1,
            found: phase.grid.len(),
        });
    }
    let w = amplitude.evaluate(amplitude_scores)?;
    let s = phase.evaluate(phase_scores)?;
    let h = clr_inverse(&s);
    let h_inverse = invert_warp(&h)?;
    let y = h_inverse.values().iter().map(|&u| interp_uniform(&w, u)).collect();
    let times = uniform_grid(points).iter().map(|u| u * duration).collect();
    Ok(Reconstruction { times, w, h, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn identical_samples_have_zero_spectrum() {
        let s = vec![vec![1.0, 2.0, 3.0, 2.0]; 4];
        let b = fit_process(Process::Amplitude, &s).unwrap();
        assert_eq!(b.mean, s[0]);
        assert!(b.eigenvalues.iter().all(|l| *l == 0.0 || l.abs() < 1e-15));
        assert_eq!(select_components(&b, Process::Amplitude, 10.0, DeviationMetric::Peak), 1);
    }

    #[test]
    fn project_mean_plus_mode() {
        let s = vec![
            vec![1.0, 2.0, 0.5, 4.0, 1.0],
            vec![0.0, 1.0, 2.5, 1.0, 3.0],
            vec![2.0, 0.0, 1.0, 1.0, 0.0],
            vec![1.0, 1.5, 2.0, 0.5, 2.0],
        ];
        let b = fit_process(Process::Amplitude, &s).unwrap();
        let x: Vec<f64> = b.mean.iter().zip(&b.eigenfunctions[0]).map(|(m, p)| m + 3.0 * p).collect();
        let a = b.project(&x, 5).unwrap();
        assert!((a[0] - 3.0).abs() < 1e-10);
        assert!(a[1..].iter().all(|v| v.abs() < 1e-10));
        assert!(b.project(&b.mean, 5).unwrap().iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(b.project(&[1.0], 1), Err(Error::GridMismatch { .. })));
    }

    #[test]
    fn selection_examples() {
        let devs = [121.16, 66.52, 31.22, 17.50, 9.00, 4.86, 3.64, 2.71, 1.96];
        assert_eq!(select_from_deviations(&devs, Process::Amplitude, 10.0), 4);
        assert_eq!(select_from_deviations(&[0.0; 3], Process::Amplitude, 10.0), 1);
        // exp(0.05) - 1 > 0.05, exp(0.04) - 1 < 0.05
        assert_eq!(select_from_deviations(&[0.2, 0.05, 0.04], Process::Phase, 0.05), 2);
    }

    #[test]
    fn single_component_share() {
        let t = variance_table(&[2.5, 0.0, 0.0]);
        assert_eq!(t[0].percent, 100.0);
        assert_eq!(t[2].cumulative, 100.0);
    }

    #[test]
    fn zero_scores_rebuild_mean_curve() {
        let s = vec![
            vec![100.0, 120.0, 130.0, 110.0],
            vec![105.0, 118.0, 128.0, 100.0],
            vec![98.0, 125.0, 131.0, 112.0],
        ];
        let p = vec![vec![0.1, -0.2, 0.1], vec![-0.1, 0.0, 0.1], vec![0.0, 0.2, -0.2]];
        let a = fit_process(Process::Amplitude, &s).unwrap();
        let f = fit_process(Process::Phase, &p).unwrap();
        let r = reconstruct(&a, &[], &f, &[], 1.0).unwrap();
        assert_eq!(r.w, a.mean);
        let hinv = invert_warp(&clr_inverse(&f.mean)).unwrap();
        for (y, u) in r.y.iter().zip(hinv.values()) {
            assert!((y - interp_uniform(&a.mean, *u)).abs() < 1e-12);
        }
        assert_eq!(r.times, uniform_grid(4));
    }
}
