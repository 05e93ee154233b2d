use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::quad::{interp, interp_uniform, trapezoid_weights, uniform_grid};

/// A monotone map of [0, 1] onto itself, sampled on `m + 1` equispaced points.
///
/// Construction guarantees `values[0] == 0`, `values[m] == 1` and strict
/// increase, so every value of this type is a valid warp.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpingFunction {
    values: Vec<f64>,
}

impl WarpingFunction {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput("warp needs at least two points".into()));
        }
        if values[0] != 0.0 || values[values.len() - 1] != 1.0 {
            return Err(Error::InvalidInput("warp must map 0 to 0 and 1 to 1".into()));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonMonotone(j));
        }
        if let Some(j) = values.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::NonMonotone(j + 1));
        }
        Ok(Self { values })
    }

    pub fn identity(points: usize) -> Self {
        Self {
            values: uniform_grid(points),
        }
    }

    /// Builds a warp from cumulative sums that are already known to be
    /// strictly increasing with exact endpoints.
    pub(crate) fn from_trusted(values: Vec<f64>) -> Self {
        debug_assert!(Self::new(values.clone()).is_ok());
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn points(&self) -> usize {
        self.values.len()
    }

    pub fn cells(&self) -> usize {
        self.values.len() - 1
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.values.len())
    }

    pub fn eval(&self, x: f64) -> f64 {
        interp_uniform(&self.values, x)
    }

    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Trapezoidal approximation of the integral of `(g(t) - t)^2`.
    pub fn distortion(&self) -> f64 {
        let grid = self.grid();
        let w = trapezoid_weights(&grid);
        self.values
            .iter()
            .zip(&grid)
            .zip(&w)
            .map(|((g, t), w)| w * (g - t) * (g - t))
            .sum()
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_identity(&self) -> bool {
        self.values == uniform_grid(self.values.len())
    }
}

/// Inverse warp, by inverting the piecewise-linear interpolant and
/// resampling it on the common grid.
pub fn invert_warp(h: &WarpingFunction) -> Result<WarpingFunction> {
    // values are validated at construction; re-check in case of a hand-built warp
    if let Some(j) = h.values.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::NonMonotone(j + 1));
    }
    let grid = h.grid();
    let n = grid.len();
    let mut inv: Vec<f64> = grid.iter().map(|&t| interp(&h.values, &grid, t)).collect();
    inv[0] = 0.0;
    inv[n - 1] = 1.0;
    WarpingFunction::new(inv)
}

/// Pointwise mean of warps on a common grid.
pub fn average_warps(warps: &[WarpingFunction]) -> Result<WarpingFunction> {
    let first = warps.first().ok_or(Error::EmptyPool)?;
    let n = first.points();
    if let Some(w) = warps.iter().find(|w| w.points() != n) {
        return Err(Error::GridMismatch {
            expected: n,
            found: w.points(),
        });
    }
    if warps.iter().all(|w| w == first) {
        return Ok(first.clone());
    }
    let count = warps.len() as f64;
    let mut mean = alloc::vec![0.0; n];
    for w in warps {
        for (m, v) in mean.iter_mut().zip(&w.values) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    mean[0] = 0.0;
    mean[n - 1] = 1.0;
    WarpingFunction::new(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn rejects_invalid() {
        assert!(WarpingFunction::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(WarpingFunction::new(vec![0.1, 0.5, 1.0]).is_err());
        assert!(WarpingFunction::new(vec![0.0, 0.5, 0.9]).is_err());
        assert!(WarpingFunction::new(vec![0.0, 0.7, 0.5, 1.0]).is_err());
    }

    #[test]
    fn identity_inverts_to_identity() {
        let id = WarpingFunction::identity(16);
        assert_eq!(invert_warp(&id).unwrap(), id);
        assert!(id.is_identity());
        assert_eq!(id.distortion(), 0.0);
    }

    #[test]
    fn two_piece_inverse() {
        // knots (0,0), (0.5,0.25), (1,1) sampled on a 5-point grid
        let h = WarpingFunction::new(vec![0.0, 0.125, 0.25, 0.625, 1.0]).unwrap();
        let inv = invert_warp(&h).unwrap();
        // inverse passes through (0.25, 0.5): slope 2 then 2/3
        let expected = [0.0, 0.5, 2.0 / 3.0, 5.0 / 6.0, 1.0];
        for (a, b) in inv.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert!((inv.eval(0.25) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mean_of_two() {
        let g1 = WarpingFunction::new(vec![0.0, 0.2, 0.6, 1.0]).unwrap();
        let g2 = WarpingFunction::new(vec![0.0, 0.4, 0.8, 1.0]).unwrap();
        let m = average_warps(&[g1, g2]).unwrap();
        let expected = [0.0, 0.3, 0.7, 1.0];
        for (a, b) in m.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(average_warps(&[]), Err(Error::EmptyPool));
    }
}
