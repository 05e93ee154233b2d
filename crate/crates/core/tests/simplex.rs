use proptest::prelude::*;
use warpfit_core::register::WarpingFunction;
use warpfit_core::simplex::{clr_forward, clr_inverse, log_derivative_curve, CompositionVector};

// Strict warp from positive raw increments.
fn warp_from(raw: &[f64]) -> WarpingFunction {
    let total: f64 = raw.iter().sum();
    let mut v = vec![0.0];
    let mut acc = 0.0;
    for r in &raw[..raw.len() - 1] {
        acc += r / total;
        v.push(acc);
    }
    v.push(1.0);
    WarpingFunction::new(v).unwrap()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn assert_valid(h: &WarpingFunction) {
    let v = h.values();
    assert_eq!(v[0], 0.0);
    assert_eq!(*v.last().unwrap(), 1.0);
    assert!(v.windows(2).all(|w| w[0] < w[1]));
}

proptest! {
    #[test]
    fn warp_round_trip(raw in prop::collection::vec(0.01f64..10.0, 15)) {
        let h = warp_from(&raw);
        let back = clr_inverse(clr_forward(&h).unwrap().as_slice());
        prop_assert!(sup(h.values(), back.values()) < 1e-10);
    }

    #[test]
    fn coordinate_round_trip(raw in prop::collection::vec(-4.0f64..4.0, 2..30)) {
        let s = CompositionVector::new(raw).unwrap();
        prop_assert!(s.as_slice().iter().sum::<f64>().abs() < 1e-12);
        let back = clr_forward(&clr_inverse(s.as_slice())).unwrap();
        prop_assert!(sup(s.as_slice(), back.as_slice()) < 1e-10);
    }

    #[test]
    fn inverse_is_always_feasible(raw in prop::collection::vec(-800.0f64..800.0, 1..40)) {
        assert_valid(&clr_inverse(&raw));
    }

    #[test]
    fn constant_shift_does_not_matter(raw in prop::collection::vec(-3.0f64..3.0, 2..20), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = raw.iter().map(|x| x + c).collect();
        prop_assert!(sup(clr_inverse(&raw).values(), clr_inverse(&shifted).values()) < 1e-12);
    }

    #[test]
    fn clr_is_scale_free(raw in prop::collection::vec(0.01f64..10.0, 3..20), k in 0.001f64..1000.0) {
        let scaled: Vec<f64> = raw.iter().map(|r| r * k).collect();
        let a = clr_forward(&warp_from(&raw)).unwrap();
        let b = clr_forward(&warp_from(&scaled)).unwrap();
        prop_assert!(sup(a.as_slice(), b.as_slice()) < 1e-10);
    }

    #[test]
    fn log_derivative_reproduces_increments(raw in prop::collection::vec(-2.0f64..2.0, 2..25)) {
        let s = CompositionVector::new(raw).unwrap();
        let h = clr_inverse(s.as_slice());
        let (_, ld) = log_derivative_curve(&s);
        let m = ld.len() as f64;
        let inc: Vec<f64> = ld.iter().map(|v| v.exp() / m).collect();
        prop_assert!(sup(&inc, &h.increments()) < 1e-12);
    }
}

#[test]
fn round_trip_of_a_thousand_warps_is_fast() {
    use rand::Rng;
    let mut rng = warpfit_core::rng::substream(0, &["clr-bulk"]);
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let raw: Vec<f64> = (0..15).map(|_| rng.random_range(0.05..5.0)).collect();
        let h = warp_from(&raw);
        let back = clr_inverse(clr_forward(&h).unwrap().as_slice());
        worst = worst.max(sup(h.values(), back.values()));
    }
    assert!(worst < 1e-10, "{worst}");
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn geometric_increments_have_linear_log_derivative() {
    let r: f64 = 1.3;
    let raw: Vec<f64> = (0..10).map(|j| r.powi(j)).collect();
    let s = clr_forward(&warp_from(&raw)).unwrap();
    let (_, ld) = log_derivative_curve(&s);
    for w in ld.windows(2) {
        assert!((w[1] - w[0] - r.ln()).abs() < 1e-12);
    }
}
