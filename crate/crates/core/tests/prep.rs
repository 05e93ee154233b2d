use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use warpfit_core::prep::{screen_missing, smooth_curve, RawCurve};

// Weighted least squares at one point, solved by QR on the sqrt-weighted
// design rather than the closed-form 2x2 normal equations.
fn wls_oracle(us: &[f64], ys: &[f64], x0: f64, bandwidth: f64) -> f64 {
    let n = us.len();
    let root: Vec<f64> = us
        .iter()
        .map(|u| (-0.5 * ((u - x0) / bandwidth).powi(2)).exp().sqrt())
        .collect();
    let design = DMatrix::from_fn(n, 2, |i, c| root[i] * if c == 0 { 1.0 } else { us[i] - x0 });
    let rhs = DVector::from_fn(n, |i, _| root[i] * ys[i]);
    let qr = design.qr();
    let beta = qr.r().solve_upper_triangular(&(qr.q().transpose() * rhs)).unwrap();
    beta[0]
}

fn noisy_sine(n: usize, missing: &[usize]) -> RawCurve {
    let times: Vec<f64> = (0..n).map(|i| 0.12 + 0.004 * i as f64 + 0.0007 * ((i * 7) % 3) as f64).collect();
    let values = (0..n)
        .map(|i| {
            if missing.contains(&i) {
                None
            } else {
                let t = times[i];
                Some(180.0 + 25.0 * (40.0 * t).sin() + 2.0 * ((i * 37 % 11) as f64 - 5.0) / 5.0)
            }
        })
        .collect();
    RawCurve::new("sine", times, values, BTreeMap::new()).unwrap()
}

#[test]
fn smoother_matches_weighted_least_squares_oracle() {
    let raw = noisy_sine(60, &[3, 17, 40]);
    let t0 = raw.times[0];
    let span = raw.times[59] - t0;
    let (us, ys): (Vec<f64>, Vec<f64>) = raw
        .times
        .iter()
        .zip(&raw.values)
        .filter_map(|(t, v)| v.map(|v| ((t - t0) / span, v)))
        .unzip();
    for (bw, m) in [(0.05, 16), (0.12, 31), (0.3, 9)] {
        let s = smooth_curve(&raw, bw, m).unwrap();
        for (u, v) in s.grid.iter().zip(&s.values) {
            let o = wls_oracle(&us, &ys, *u, bw);
            assert!((v - o).abs() <= 1e-10 * o.abs(), "bw {bw} u {u}: {v} vs {o}");
        }
    }
}

#[test]
fn constant_input_is_reproduced_and_grid_is_fixed() {
    let times: Vec<f64> = (0..25).map(|i| 2.0 + 0.01 * i as f64).collect();
    let raw = RawCurve::new("k", times, vec![Some(123.25); 25], BTreeMap::new()).unwrap();
    let s = smooth_curve(&raw, 0.05, 16).unwrap();
    assert_eq!(s.grid[0], 0.0);
    assert_eq!(s.grid[15], 1.0);
    for (j, u) in s.grid.iter().enumerate() {
        assert!((u - j as f64 / 15.0).abs() < 1e-15);
    }
    assert!(s.values.iter().all(|v| (v - 123.25).abs() < 1e-10));
    assert!((s.duration - 24.0).abs() < 1e-9);
}

#[test]
fn screening_examples() {
    let mk = |n: usize, missing: usize| {
        let times = (0..n).map(|i| i as f64 * 0.01).collect();
        let values = (0..n).map(|i| if i < missing { None } else { Some(1.0) }).collect();
        RawCurve::new("s", times, values, BTreeMap::new()).unwrap()
    };
    assert!(screen_missing(&mk(16, 0), 0.05));
    assert!(!screen_missing(&mk(16, 1), 0.05));
    assert!(screen_missing(&mk(100, 4), 0.05));
}

proptest! {
    #[test]
    fn screening_is_monotone_in_threshold(n in 4usize..60, missing in 0usize..60, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let missing = missing.min(n);
        let times = (0..n).map(|i| i as f64).collect();
        let values = (0..n).map(|i| if i < missing { None } else { Some(0.0) }).collect();
        let raw = RawCurve::new("p", times, values, BTreeMap::new()).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        // accepted at the lower threshold implies accepted at the higher one
        prop_assert!(!screen_missing(&raw, lo) || screen_missing(&raw, hi));
    }

    #[test]
    fn linear_curves_are_reproduced(slope in -100.0f64..100.0, icpt in 50.0f64..300.0, bw in 0.03f64..0.5) {
        let times: Vec<f64> = (0..30).map(|i| 0.5 + 0.007 * i as f64).collect();
        let values = times.iter().map(|t| Some(icpt + slope * t)).collect();
        let raw = RawCurve::new("l", times.clone(), values, BTreeMap::new()).unwrap();
        let s = smooth_curve(&raw, bw, 16).unwrap();
        for (u, v) in s.grid.iter().zip(&s.values) {
            let t = 0.5 + u * (times[29] - 0.5);
            prop_assert!((v - (icpt + slope * t)).abs() < 1e-8 * (1.0 + icpt.abs()));
        }
    }
}
