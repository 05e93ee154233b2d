use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::quad::{interp_uniform, trapezoid_weights, uniform_grid};
use crate::register::warp::WarpingFunction;
use crate::simplex::clr_inverse;

/// Tuning for a single pairwise alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpOptions {
    pub lambda: f64,
    /// Iteration cap for each simplex run.
    pub max_iter: usize,
    /// Simplex diameter tolerance in CLR coordinates.
    pub tol: f64,
    /// Additional simplex runs restarted from the incumbent.
    pub restarts: usize,
    /// A target whose range does not exceed this is treated as flat. `None`
    /// uses `1e-6` times the reference range.
    pub flat_threshold: Option<f64>,
}

impl WarpOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }
}

impl Default for WarpOptions {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            max_iter: 500,
            tol: 1e-6,
            restarts: 3,
            flat_threshold: None,
        }
    }
}

/// Result of aligning a target curve to a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseWarp {
    pub warp: WarpingFunction,
    pub cost: f64,
    /// The target was flat, so the warp is not identified and the identity
    /// was returned.
    pub degenerate: bool,
}

/// Discretized alignment cost: trapezoidal integral of
/// `(reference(g(t)) - target(t))^2 + lambda * (g(t) - t)^2`.
pub fn warp_cost(target: &[f64], reference: &[f64], g: &[f64], lambda: f64) -> f64 {
    let n = target.len();
    let grid = uniform_grid(n);
    let weights = trapezoid_weights(&grid);
    cost_with(target, reference, g, lambda, &grid, &weights)
}

fn cost_with(
    target: &[f64],
    reference: &[f64],
    g: &[f64],
    lambda: f64,
    grid: &[f64],
    weights: &[f64],
) -> f64 {
    let mut total = 0.0;
    for j in 0..target.len() {
        let d = interp_uniform(reference, g[j]) - target[j];
        let p = g[j] - grid[j];
        total += weights[j] * (d * d + lambda * p * p);
    }
    total
}

fn range(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

// The last CLR coordinate is minus the sum of the others, so the search runs
// over the m - 1 dimensional zero-sum subspace.
fn expand(free: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(free);
    out.push(-free.iter().sum::<f64>());
}

/// Warp `g` minimizing the penalized discrepancy between `reference(g(t))`
/// and `target(t)` over monotone, boundary-fixed warps on the shared grid.
///
/// The search starts at the identity, so identical curves return the
/// identity exactly.
pub fn pairwise_warp_values(
    target: &[f64],
    reference: &[f64],
    opts: &WarpOptions,
) -> Result<PairwiseWarp> {
    let n = target.len();
    if reference.len() != n {
        return Err(Error::GridMismatch {
            expected: n,
            found: reference.len(),
        });
    }
    if n < 3 {
        return Err(Error::InvalidInput("pairwise warp needs at least 3 grid points".into()));
    }
    if !(opts.lambda >= 0.0) || !opts.lambda.is_finite() {
        return Err(Error::InvalidInput("penalty must be finite and non-negative".into()));
    }
    let grid = uniform_grid(n);
    let weights = trapezoid_weights(&grid);

    let threshold = opts.flat_threshold.unwrap_or(1e-6 * range(reference));
    if range(target) <= threshold {
        let warp = WarpingFunction::identity(n);
        let cost = cost_with(target, reference, warp.values(), opts.lambda, &grid, &weights);
        return Ok(PairwiseWarp {
            warp,
            cost,
            degenerate: true,
        });
    }

    let cells = n - 1;
    let mut coords = Vec::with_capacity(cells);
    let mut objective = |free: &[f64]| {
        expand(free, &mut coords);
        let g = clr_inverse(&coords);
        cost_with(target, reference, g.values(), opts.lambda, &grid, &weights)
    };

    let mut x = alloc::vec![0.0; cells - 1];
    let mut best = objective(&x);
    if !best.is_finite() {
        return Err(Error::OptimizerDiverged);
    }
    let mut step = 0.5;
    for _ in 0..=opts.restarts {
        let run = nelder_mead(
            &mut objective,
            &x,
            &NelderMeadOptions {
                max_iter: opts.max_iter,
                tol_x: opts.tol,
                initial_step: step,
                ..NelderMeadOptions::default()
            },
        );
        let improved = run.value < best - 1e-12 * (1.0 + best.abs());
        if run.value < best {
            best = run.value;
            x = run.x;
        }
        if !improved && step < 0.5 {
            break;
        }
        step = 0.1;
    }
    if !best.is_finite() {
        return Err(Error::OptimizerDiverged);
    }
    expand(&x, &mut coords);
    Ok(PairwiseWarp {
        warp: clr_inverse(&coords),
        cost: best,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn template(n: usize) -> Vec<f64> {
        uniform_grid(n)
            .iter()
            .map(|t| 120.0 + 30.0 * (PI * t).sin() + 15.0 * t)
            .collect()
    }

    #[test]
    fn identical_curves_give_identity() {
        let y = template(16);
        for lambda in [0.0, 0.1, 10.0] {
            let r = pairwise_warp_values(&y, &y, &WarpOptions::with_lambda(lambda)).unwrap();
            assert!(r.warp.is_identity());
            assert_eq!(r.cost, 0.0);
        }
    }

    #[test]
    fn heavy_penalty_keeps_identity() {
        let a = template(16);
        let b: Vec<f64> = uniform_grid(16).iter().map(|t| 100.0 + 50.0 * t * t).collect();
        let r = pairwise_warp_values(&a, &b, &WarpOptions::with_lambda(1e9)).unwrap();
        assert!(r.warp.sup_distance(&WarpingFunction::identity(16)) < 1e-6);
    }

    #[test]
    fn flat_target_is_degenerate() {
        let a = vec![100.0; 16];
        let r = pairwise_warp_values(&a, &template(16), &WarpOptions::default()).unwrap();
        assert!(r.degenerate);
        assert!(r.warp.is_identity());
    }

    #[test]
    fn recovers_a_shift() {
        let n = 16;
        let grid = uniform_grid(n);
        let reference = template(n);
        let truth: Vec<f64> = grid.iter().map(|t| t + 0.15 * t * (1.0 - t)).collect();
        let target: Vec<f64> = truth.iter().map(|g| interp_uniform(&reference, *g)).collect();
        let r = pairwise_warp_values(&target, &reference, &WarpOptions::default()).unwrap();
        let rmse = (r
            .warp
            .values()
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(rmse < 0.02, "rmse {rmse}");
    }
}
