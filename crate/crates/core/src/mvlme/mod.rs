//! Multivariate linear mixed-effects model with crossed random effects,
//! fitted by profiled restricted maximum likelihood.
//!
//! The response row of observation `i` is `a_i = B^T x_i + sum_r gamma_{r,
//! g_r(i)} + e_i` with `gamma_{r,g} ~ N(0, Sigma_r)` and
//! `e_i ~ N(0, diag(sigma_1^2, ..., sigma_p^2))`. Each `Sigma_r` has a mask
//! of entries fixed at zero.

mod cov;
mod design;
pub mod oracle;
mod reml;

pub use cov::{CovLayout, Expanded, Mask, MIN_EIGENVALUE};
pub use design::{build_design, parse_formula, sorted_levels, Design, DesignInput};
pub use reml::{Conditional, Criterion, ProfiledDeviance};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::optim::{hybrid, newton_polish, BfgsOptions, HybridOptions, NelderMeadOptions};

// Newton polishing costs O(n^2) evaluations per step; skip it beyond this.
const POLISH_MAX_DIM: usize = 12;
use crate::rng::substream;

/// Grouping factor: level labels and the level index of each observation.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFactor {
    pub name: String,
    pub levels: Vec<String>,
    pub index: Vec<usize>,
}

/// Designs and covariance masks of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub x: DMatrix<f64>,
    pub x_names: Vec<String>,
    pub factors: Vec<RandomFactor>,
    /// One mask per factor.
    pub masks: Vec<Mask>,
    pub response_names: Vec<String>,
}

impl ModelSpec {
    pub fn new(
        x: DMatrix<f64>,
        x_names: Vec<String>,
        factors: Vec<RandomFactor>,
        masks: Vec<Mask>,
        response_names: Vec<String>,
    ) -> Result<Self> {
        let n = x.nrows();
        if x_names.len() != x.ncols() {
            return Err(Error::InvalidInput("one name per design column required".into()));
        }
        if masks.len() != factors.len() {
            return Err(Error::InvalidInput("one mask per random factor required".into()));
        }
        let p = response_names.len();
        if masks.iter().any(|m| m.dim() != p) {
            return Err(Error::InvalidInput("mask dimension differs from response".into()));
        }
        for f in &factors {
            if f.index.len() != n {
                return Err(Error::InvalidInput(format!("factor {} has the wrong length", f.name)));
            }
            if f.index.iter().any(|&g| g >= f.levels.len()) {
                return Err(Error::InvalidInput(format!("factor {} has an out-of-range level", f.name)));
            }
        }
        Ok(Self {
            x,
            x_names,
            factors,
            masks,
            response_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn p(&self) -> usize {
        self.response_names.len()
    }
}

/// Response matrix `[amplitude scores, phase scores, duration]` with its
/// column names and the block mask that keeps scores of the same process
/// uncorrelated.
pub fn joint_response(
    amplitude: &[Vec<f64>],
    phase: &[Vec<f64>],
    durations: &[f64],
) -> Result<(DMatrix<f64>, Vec<String>, Mask)> {
    let n = durations.len();
    if amplitude.len() != n || phase.len() != n {
        return Err(Error::InvalidInput("scores and durations differ in length".into()));
    }
    let mw = amplitude.first().map_or(0, Vec::len);
    let ms = phase.first().map_or(0, Vec::len);
    if amplitude.iter().any(|r| r.len() != mw) || phase.iter().any(|r| r.len() != ms) {
        return Err(Error::InvalidInput("ragged score matrix".into()));
    }
    let p = mw + ms + 1;
    let a = DMatrix::from_fn(n, p, |i, j| {
        if j < mw {
            amplitude[i][j]
        } else if j < mw + ms {
            phase[i][j - mw]
        } else {
            durations[i]
        }
    });
    let mut names: Vec<String> = (1..=mw).map(|j| format!("A{j}")).collect();
    names.extend((1..=ms).map(|j| format!("S{j}")));
    names.push("T".into());
    Ok((a, names, Mask::block_orthogonal(&[mw, ms, 1])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Single residual variance shared by all components.
    pub scalar_residual: bool,
    pub criterion: Criterion,
    /// Evaluation budget of the quasi-Newton stage; a finite-difference
    /// gradient counts as one evaluation.
    pub max_evals: usize,
    /// Gradient-norm tolerance of the quasi-Newton stage, relative to
    /// `1 + |deviance|`.
    pub tol: f64,
    /// Extra hybrid runs from perturbed starts when the first does not
    /// converge.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            scalar_residual: false,
            criterion: Criterion::Reml,
            max_evals: 500,
            tol: 1e-6,
            restarts: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomEffectFit {
    pub name: String,
    pub levels: Vec<String>,
    pub covariance: DMatrix<f64>,
    /// Conditional modes, one row per level.
    pub blups: DMatrix<f64>,
    pub mask: Mask,
}

impl RandomEffectFit {
    pub fn sds(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub converged: bool,
    pub evaluations: usize,
    pub iterations: usize,
    /// The positive-definiteness shift was active at the optimum.
    pub clamped: bool,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub response_names: Vec<String>,
    pub fixed_names: Vec<String>,
    /// `k x p`
    pub fixed: DMatrix<f64>,
    pub fixed_se: DMatrix<f64>,
    pub random: Vec<RandomEffectFit>,
    /// Residual variances `sigma^2 d_j` at the optimum.
    pub residual_variances: Vec<f64>,
    /// Residual standard deviations from the conditional residuals plus
    /// spherical random-effect terms, divided by `N - k`.
    pub residual_sds: Vec<f64>,
    pub sigma2: f64,
    pub deviance: f64,
    pub criterion: Criterion,
    pub scalar_residual: bool,
    pub theta: Vec<f64>,
    pub convergence: Convergence,
    pub n_obs: usize,
}

impl FittedModel {
    /// Fixed effects plus the selected random effects for one observation.
    /// `levels[r]` is the level of factor `r`, or `None` to leave it out.
    pub fn predict(&self, x_row: &[f64], levels: &[Option<usize>]) -> Vec<f64> {
        let p = self.response_names.len();
        (0..p)
            .map(|j| {
                let mut v: f64 = x_row.iter().enumerate().map(|(l, x)| x * self.fixed[(l, j)]).sum();
                for (r, lvl) in levels.iter().enumerate() {
                    if let (Some(g), Some(re)) = (lvl, self.random.get(r)) {
                        v += re.blups[(*g, j)];
                    }
                }
                v
            })
            .collect()
    }
}

fn column_variances(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows() as f64;
    (0..a.ncols())
        .map(|j| {
            let c = a.column(j);
            let mean = c.sum() / n;
            c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)
        })
        .collect()
}

/// Minimizes the profiled deviance over the covariance parameters with the
/// hybrid simplex / quasi-Newton schedule.
pub fn fit(spec: &ModelSpec, a: &DMatrix<f64>, opts: &FitOptions) -> Result<FittedModel> {
    let layout = CovLayout::new(spec.p(), spec.masks.clone(), opts.scalar_residual)?;
    let start = layout.initial(&column_variances(a));
    let problem = ProfiledDeviance::new(spec, a, layout, opts.criterion)?;
    problem.deviance(&start)?;

    let schedule = HybridOptions {
        simplex: NelderMeadOptions {
            max_iter: 20_000,
            tol_x: 1e-10,
            initial_step: 0.1,
            stall: Some((20, 1e-4)),
            max_evals: 50_000,
        },
        quasi_newton: BfgsOptions {
            max_evals: opts.max_evals,
            grad_tol: opts.tol,
            fd_step: 1e-5,
        },
    };
    let objective = |t: &[f64]| problem.deviance(t).unwrap_or(f64::INFINITY);
    let mut best = hybrid(objective, &start, &schedule);
    let mut evaluations = best.evaluations;
    let mut iterations = best.iterations;
    for attempt in 0..opts.restarts {
        if best.converged {
            break;
        }
        let mut rng = substream(opts.seed, &["fit", "restart", &format!("{attempt}")]);
        let from: Vec<f64> = best
            .x
            .iter()
            .map(|t| {
                let z: f64 = StandardNormal.sample(&mut rng);
                t + 0.05 * z
            })
            .collect();
        let run = hybrid(objective, &from, &schedule);
        evaluations += run.evaluations;
        iterations += run.iterations;
        let tie = run.value <= best.value + 1e-8 * (1.0 + best.value.abs());
        if run.value < best.value || (run.converged && tie) {
            best = run;
        }
    }

    if best.x.len() <= POLISH_MAX_DIM {
        let polished = newton_polish(objective, &best.x, 1e-5, 8, 1e-12, opts.tol);
        evaluations += polished.evaluations;
        iterations += polished.iterations;
        if polished.iterations > 0 || polished.converged {
            best.converged |= polished.converged;
            best.x = polished.x;
            best.value = polished.value;
        }
    }

    let cond = problem.evaluate(&best.x)?;
    let min_eigenvalue = cond.min_eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let random = spec
        .factors
        .iter()
        .zip(&spec.masks)
        .zip(cond.covariances.iter().zip(&cond.blups))
        .map(|((f, m), (c, b))| RandomEffectFit {
            name: f.name.clone(),
            levels: f.levels.clone(),
            covariance: c.clone(),
            blups: b.clone(),
            mask: m.clone(),
        })
        .collect();
    Ok(FittedModel {
        response_names: spec.response_names.clone(),
        fixed_names: spec.x_names.clone(),
        fixed: cond.fixed,
        fixed_se: cond.fixed_se,
        random,
        residual_sds: cond.conditional_residual_variances.iter().map(|v| v.sqrt()).collect(),
        residual_variances: cond.residual_variances,
        sigma2: cond.sigma2,
        deviance: cond.deviance,
        criterion: opts.criterion,
        scalar_residual: opts.scalar_residual,
        theta: best.x,
        convergence: Convergence {
            converged: best.converged,
            evaluations,
            iterations,
            clamped: min_eigenvalue < MIN_EIGENVALUE,
            min_eigenvalue,
        },
        n_obs: spec.n(),
    })
}

/// Correlation matrix of one random effect. `None` marks entries involving a
/// component with zero variance.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub name: String,
    pub values: Vec<Vec<Option<f64>>>,
}

/// Rescales a covariance to correlations; masked entries are exact zeros
/// and the diagonal is exactly one.
pub fn correlation_from_covariance(cov: &DMatrix<f64>, mask: &Mask) -> Vec<Vec<Option<f64>>> {
    let p = cov.nrows();
    (0..p)
        .map(|i| {
            (0..p)
                .map(|j| {
                    let (vi, vj) = (cov[(i, i)], cov[(j, j)]);
                    if !(vi > 0.0) || !(vj > 0.0) {
                        None
                    } else if i == j {
                        Some(1.0)
                    } else if !mask.is_free(i, j) {
                        Some(0.0)
                    } else {
                        Some((cov[(i, j)] / (vi.sqrt() * vj.sqrt())).clamp(-1.0, 1.0))
                    }
                })
                .collect()
        })
        .collect()
}

pub fn correlation_report(model: &FittedModel) -> Vec<CorrelationMatrix> {
    model
        .random
        .iter()
        .map(|r| CorrelationMatrix {
            name: r.name.clone(),
            values: correlation_from_covariance(&r.covariance, &r.mask),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn correlation_by_hand() {
        let cov = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.0, 2.0, 9.0, -3.0, 0.0, -3.0, 1.0]);
        let c = correlation_from_covariance(&cov, &Mask::full(3));
        assert_eq!(c[0][0], Some(1.0));
        assert!((c[0][1].unwrap() - 2.0 / 6.0).abs() < 1e-15);
        assert!((c[1][2].unwrap() + 1.0).abs() < 1e-15);
        let masked = correlation_from_covariance(&cov, &Mask::block_orthogonal(&[2, 1]));
        assert_eq!(masked[0][1], Some(0.0));
        let zero = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let z = correlation_from_covariance(&zero, &Mask::full(2));
        assert_eq!(z[1][1], None);
        assert_eq!(z[0][1], None);
    }

    #[test]
    fn joint_response_layout() {
        let (a, names, mask) = joint_response(
            &[vec![1.0, 2.0], vec![3.0, 4.0]],
            &[vec![5.0], vec![6.0]],
            &[20.0, 30.0],
        )
        .unwrap();
        assert_eq!(names, ["A1", "A2", "S1", "T"]);
        assert_eq!(a[(1, 3)], 30.0);
        assert!(!mask.is_free(0, 1) && mask.is_free(1, 2) && mask.is_free(2, 3));
    }
}
