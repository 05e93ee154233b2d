//! Centered log-ratio representation of discretized warping functions.
//!
//! The increments of a warp on `m + 1` grid points form a composition of
//! `m` positive parts summing to one. The CLR map sends it to an unconstrained
//! zero-sum vector, and the inverse (a cumulative softmax) always lands back
//! on a strictly increasing warp with exact endpoints.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;


use crate::error::{Error, Result};
use crate::quad::{cell_midpoints, uniform_grid};
use crate::register::WarpingFunction;

/// Smallest increment accepted from external data, and the floor applied
/// inside [`clr_inverse`].
pub const INCREMENT_FLOOR: f64 = 1e-12;

/// Zero-sum CLR coordinates of a warp (one entry per grid cell).
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionVector {
    coords: Vec<f64>,
}

impl CompositionVector {
    /// Centers `coords` so they sum to zero.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidInput("empty composition".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite CLR coordinate".into()));
        }
        Ok(Self {
            coords: center(coords),
        })
    }

    pub fn zeros(cells: usize) -> Self {
        Self {
            coords: alloc::vec![0.0; cells],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

fn center(mut v: Vec<f64>) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    for x in &mut v {
        *x -= mean;
    }
    v
}

fn clr_of_increments(increments: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = increments.iter().map(|d| d.ln()).collect();
    center(logs)
}

/// CLR transform of a warp's increments. Fails on increments at or below
/// [`INCREMENT_FLOOR`].
pub fn clr_forward(h: &WarpingFunction) -> Result<CompositionVector> {
    let inc = h.increments();
    if let Some((index, &value)) = inc.iter().enumerate().find(|(_, d)| **d <= INCREMENT_FLOOR) {
        return Err(Error::ZeroIncrement { index, value });
    }
    Ok(CompositionVector {
        coords: clr_of_increments(&inc),
    })
}

/// CLR transform after flooring increments at [`INCREMENT_FLOOR`] and
/// renormalizing. Used on internally generated warps.
pub fn clr_forward_floored(h: &WarpingFunction) -> CompositionVector {
    let mut inc = h.increments();
    for d in &mut inc {
        *d = d.max(INCREMENT_FLOOR);
    }
    CompositionVector {
        coords: clr_of_increments(&inc),
    }
}

/// Inverse CLR: cumulative softmax of `coords` starting from 0.
///
/// Accepts any finite vector (a constant shift does not change the result).
/// Increments are floored at [`INCREMENT_FLOOR`] so the output is strictly
/// increasing in floating point.
pub fn clr_inverse(coords: &[f64]) -> WarpingFunction {
    // equal coordinates map to the exact uniform grid rather than its
    // rounded cumulative sum
    if coords.windows(2).all(|w| w[0] == w[1]) {
        return WarpingFunction::identity(coords.len() + 1);
    }
    let max = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut parts: Vec<f64> = coords.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = parts.iter().sum();
    let mut needs_floor = false;
    for p in &mut parts {
        *p /= total;
        if *p < INCREMENT_FLOOR {
            *p = INCREMENT_FLOOR;
            needs_floor = true;
        }
    }
    let scale: f64 = if needs_floor { parts.iter().sum() } else { 1.0 };
    let m = parts.len();
    let mut values = Vec::with_capacity(m + 1);
    values.push(0.0);
    let mut acc = 0.0;
    for p in &parts[..m - 1] {
        acc += p / scale;
        values.push(acc);
    }
    values.push(1.0);
    // rounding in the running sum cannot reach 1 because the last part is
    // at least the floor, but guard against pathological accumulation
    for j in 1..m {
        if values[j] <= values[j - 1] || values[j] >= 1.0 {
            return clr_inverse_exact(&parts, scale);
        }
    }
    WarpingFunction::from_trusted(values)
}

// Slow path: place each level from whichever end is closer.
fn clr_inverse_exact(parts: &[f64], scale: f64) -> WarpingFunction {
    let m = parts.len();
    let mut head = alloc::vec![0.0; m + 1];
    let mut tail = alloc::vec![0.0; m + 1];
    for j in 0..m {
        head[j + 1] = head[j] + parts[j] / scale;
    }
    for j in (0..m).rev() {
        tail[j] = tail[j + 1] + parts[j] / scale;
    }
    let mut values: Vec<f64> = (0..=m)
        .map(|j| if head[j] <= 0.5 { head[j] } else { 1.0 - tail[j] })
        .collect();
    values[0] = 0.0;
    values[m] = 1.0;
    WarpingFunction::from_trusted(values)
}

/// Discretized log-derivative `log h'(u)` on the cell midpoints.
///
/// It differs from the CLR coordinates by a per-curve constant; with
/// `exp(values) / m` one recovers the increments exactly.
pub fn log_derivative_curve(s: &CompositionVector) -> (Vec<f64>, Vec<f64>) {
    let m = s.len();
    let max = s.coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + s.coords.iter().map(|c| (c - max).exp()).sum::<f64>().ln();
    let shift = (m as f64).ln() - lse;
    let values = s.coords.iter().map(|c| c + shift).collect();
    (cell_midpoints(&uniform_grid(m + 1)), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::LN_2;

    #[test]
    fn identity_is_zero() {
        let s = clr_forward(&WarpingFunction::identity(5)).unwrap();
        assert!(s.as_slice().iter().all(|c| c.abs() < 1e-15));
        assert_eq!(clr_inverse(&[0.0; 4]), WarpingFunction::identity(5));
    }

    #[test]
    fn hand_example() {
        let h = WarpingFunction::new(vec![0.0, 0.5, 0.75, 1.0]).unwrap();
        let s = clr_forward(&h).unwrap();
        let expected = [2.0 / 3.0 * LN_2, -LN_2 / 3.0, -LN_2 / 3.0];
        for (a, b) in s.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((expected[0] - 0.46210).abs() < 1e-5);
        let back = clr_inverse(&expected);
        for (a, b) in back.values().iter().zip([0.0, 0.5, 0.75, 1.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn shift_invariance() {
        let s = [0.3, -1.2, 0.5, 0.4];
        let shifted: Vec<f64> = s.iter().map(|x| x + 7.5).collect();
        let a = clr_inverse(&s);
        let b = clr_inverse(&shifted);
        assert!(a.sup_distance(&b) < 1e-15);
        let c = CompositionVector::new(shifted).unwrap();
        assert!(c.as_slice().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn zero_increment_rejected() {
        let h = WarpingFunction::new(vec![0.0, 0.5, 0.5 + 1e-13, 1.0]).unwrap();
        assert!(matches!(clr_forward(&h), Err(Error::ZeroIncrement { index: 1, .. })));
        let s = clr_forward_floored(&h);
        assert!(s.as_slice().iter().all(|c| c.is_finite()));
    }

    #[test]
    fn extreme_coordinates_stay_feasible() {
        let s = [300.0, -300.0, 0.0, -800.0, 800.0];
        let h = clr_inverse(&s);
        assert!(WarpingFunction::new(h.values().to_vec()).is_ok());
    }

    #[test]
    fn geometric_increments_give_linear_log_derivative() {
        let r: f64 = 1.3;
        let m = 6;
        let raw: Vec<f64> = (0..m).map(|j| r.powi(j as i32)).collect();
        let total: f64 = raw.iter().sum();
        let mut values = vec![0.0];
        let mut acc = 0.0;
        for d in &raw[..m - 1] {
            acc += d / total;
            values.push(acc);
        }
        values.push(1.0);
        let h = WarpingFunction::new(values).unwrap();
        let s = clr_forward(&h).unwrap();
        let (mid, ld) = log_derivative_curve(&s);
        assert_eq!(mid.len(), m);
        for w in ld.windows(2) {
            assert!((w[1] - w[0] - r.ln()).abs() < 1e-12);
        }
        // exp(log-derivative) / m reproduces the increments
        for (l, d) in ld.iter().zip(h.increments()) {
            assert!((l.exp() / m as f64 - d).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_log_derivative_is_zero() {
        let (_, ld) = log_derivative_curve(&CompositionVector::zeros(15));
        assert!(ld.iter().all(|v| v.abs() < 1e-14));
    }
}
