//! Grids, trapezoidal quadrature and monotone piecewise-linear interpolation.

use alloc::vec::Vec;

/// `n` equispaced points on [0, 1], with the endpoints exact.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2, "a grid needs at least two points");
    let m = (n - 1) as f64;
    (0..n)
        .map(|j| if j + 1 == n { 1.0 } else { j as f64 / m })
        .collect()
}

/// Midpoints of the cells of a grid.
pub fn cell_midpoints(grid: &[f64]) -> Vec<f64> {
    grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

/// Trapezoidal weights on an arbitrary increasing grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = alloc::vec![0.0; n];
    for j in 0..n.saturating_sub(1) {
        let h = 0.5 * (grid[j + 1] - grid[j]);
        w[j] += h;
        w[j + 1] += h;
    }
    w
}

pub fn integrate(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

pub fn inner(weights: &[f64], a: &[f64], b: &[f64]) -> f64 {
    weights
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * x * y)
        .sum()
}

/// Linear interpolation of `(xs, ys)` at `x`; `xs` must be nondecreasing.
/// Values outside the knot range are clamped to the end values.
pub fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    debug_assert_eq!(n, ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    // first index with xs[idx] > x
    let idx = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[idx - 1], xs[idx]);
    let (y0, y1) = (ys[idx - 1], ys[idx]);
    if x1 == x0 {
        return y1;
    }
    let a = (x - x0) / (x1 - x0);
    y0 + a * (y1 - y0)
}

/// Linear interpolation on the uniform grid with `n` points, O(1) per call.
pub fn interp_uniform(ys: &[f64], x: f64) -> f64 {
    let m = ys.len() - 1;
    if x <= 0.0 {
        return ys[0];
    }
    if x >= 1.0 {
        return ys[m];
    }
    let pos = x * m as f64;
    let j = (pos as usize).min(m - 1);
    let a = pos - j as f64;
    ys[j] + a * (ys[j + 1] - ys[j])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_exact() {
        let g = uniform_grid(16);
        assert_eq!(g.len(), 16);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[15], 1.0);
        assert!((g[3] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let g = uniform_grid(7);
        let w = trapezoid_weights(&g);
        let y: Vec<f64> = g.iter().map(|u| 3.0 * u - 1.0).collect();
        assert!((integrate(&w, &y) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn interp_matches_uniform_variant() {
        let g = uniform_grid(9);
        let y: Vec<f64> = g.iter().map(|u| u * u).collect();
        for k in 0..=40 {
            let x = k as f64 / 40.0;
            assert!((interp(&g, &y, x) - interp_uniform(&y, x)).abs() < 1e-14);
        }
        assert_eq!(interp(&g, &y, -1.0), 0.0);
        assert_eq!(interp(&g, &y, 2.0), 1.0);
    }
}
