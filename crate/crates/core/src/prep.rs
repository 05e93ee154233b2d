//! Curve ingestion: missing-value screening and local-linear kernel smoothing
//! onto a common grid over normalized time.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

// inherent float methods are unavailable without std
#[allow(unused_imports)]
use num_traits::Float;


use crate::error::{Error, Result};
use crate::quad::uniform_grid;

/// Minimum number of non-missing readings needed to smooth a curve.
pub const MIN_OBSERVATIONS: usize = 4;

/// Raw readings of one curve. Times are in seconds, values in Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCurve {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub covariates: BTreeMap<String, String>,
}

impl RawCurve {
    pub fn new(
        id: impl Into<String>,
        times: Vec<f64>,
        values: Vec<Option<f64>>,
        covariates: BTreeMap<String, String>,
    ) -> Result<Self> {
        let id = id.into();
        if times.len() != values.len() {
            return Err(Error::InvalidInput(alloc::format!(
                "curve {id}: {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput(alloc::format!("curve {id}: non-finite time")));
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(alloc::format!(
                "curve {id}: times not strictly increasing at reading {}",
                i + 1
            )));
        }
        Ok(Self {
            id,
            times,
            values,
            covariates,
        })
    }

    pub fn missing_count(&self) -> usize {
        self.values
            .iter()
            .filter(|v| !matches!(v, Some(x) if x.is_finite()))
            .count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 1.0;
        }
        self.missing_count() as f64 / self.values.len() as f64
    }

    /// Time span in tens of milliseconds.
    pub fn duration(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => (b - a) * 100.0,
            _ => 0.0,
        }
    }

    /// Usable readings as `(normalized time, value)` pairs.
    fn usable(&self) -> (Vec<f64>, Vec<f64>) {
        let t0 = self.times[0];
        let span = self.times[self.times.len() - 1] - t0;
        self.times
            .iter()
            .zip(&self.values)
            .filter_map(|(t, v)| match v {
                Some(x) if x.is_finite() => Some(((t - t0) / span, *x)),
                _ => None,
            })
            .unzip()
    }
}

/// A smoothed curve on `m + 1` equispaced points of [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCurve {
    pub id: String,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Duration in tens of milliseconds.
    pub duration: f64,
    pub covariates: BTreeMap<String, String>,
}

impl SampledCurve {
    pub fn new(id: impl Into<String>, values: Vec<f64>, duration: f64) -> Result<Self> {
        let id = id.into();
        if values.len() < 2 {
            return Err(Error::InvalidInput(alloc::format!("curve {id}: grid too short")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(alloc::format!("curve {id}: non-finite value")));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::InvalidInput(alloc::format!(
                "curve {id}: duration must be positive"
            )));
        }
        Ok(Self {
            id,
            grid: uniform_grid(values.len()),
            values,
            duration,
            covariates: BTreeMap::new(),
        })
    }

    pub fn with_covariates(mut self, covariates: BTreeMap<String, String>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn range(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }
}

/// Accept/reject decision for a raw curve. Rejects iff the missing fraction
/// is at least `max_missing_fraction`.
pub fn screen_missing(raw: &RawCurve, max_missing_fraction: f64) -> bool {
    raw.missing_fraction() < max_missing_fraction
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthMode {
    Fixed(f64),
    /// Leave-one-out cross-validation over the candidate set of [`cv_candidates`].
    CrossValidated,
}

/// Ten log-spaced bandwidth candidates on [0.02, 0.3].
pub fn cv_candidates() -> [f64; 10] {
    let (lo, hi) = (0.02f64.ln(), 0.3f64.ln());
    let mut out = [0.0; 10];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = (lo + (hi - lo) * k as f64 / 9.0).exp();
    }
    out
}

/// Gaussian-weighted local-linear estimate at `x0`.
///
/// Returns `None` when the weighted design is numerically rank deficient.
fn local_linear(us: &[f64], ys: &[f64], x0: f64, bandwidth: f64, skip: Option<usize>) -> Option<f64> {
    let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&u, &y)) in us.iter().zip(ys).enumerate() {
        if skip == Some(i) {
            continue;
        }
        let d = u - x0;
        let z = d / bandwidth;
        let w = (-0.5 * z * z).exp();
        s0 += w;
        s1 += w * d;
        s2 += w * d * d;
        t0 += w * y;
        t1 += w * d * y;
    }
    let det = s0 * s2 - s1 * s1;
    if !(s0 > 0.0 && s2 > 0.0) || det <= 1e-10 * s0 * s2 {
        return None;
    }
    Some((s2 * t0 - s1 * t1) / det)
}

fn loo_error(us: &[f64], ys: &[f64], bandwidth: f64) -> Option<f64> {
    let mut sse = 0.0;
    for i in 0..us.len() {
        let fit = local_linear(us, ys, us[i], bandwidth, Some(i))?;
        sse += (ys[i] - fit).powi(2);
    }
    Some(sse)
}

/// Bandwidth minimizing leave-one-out squared error over [`cv_candidates`].
pub fn cv_bandwidth(raw: &RawCurve) -> Result<f64> {
    let (us, ys) = usable_checked(raw)?;
    let mut best: Option<(f64, f64)> = None;
    for b in cv_candidates() {
        if let Some(err) = loo_error(&us, &ys, b) {
            if best.is_none_or(|(e, _)| err < e) {
                best = Some((err, b));
            }
        }
    }
    best.map(|(_, b)| b).ok_or(Error::SingularFit {
        id: raw.id.clone(),
        at: f64::NAN,
    })
}

fn usable_checked(raw: &RawCurve) -> Result<(Vec<f64>, Vec<f64>)> {
    if raw.times.len() < MIN_OBSERVATIONS {
        return Err(Error::TooFewPoints {
            id: raw.id.clone(),
            usable: raw.times.len() - raw.missing_count().min(raw.times.len()),
            required: MIN_OBSERVATIONS,
        });
    }
    let (us, ys) = raw.usable();
    if us.len() < MIN_OBSERVATIONS {
        return Err(Error::TooFewPoints {
            id: raw.id.clone(),
            usable: us.len(),
            required: MIN_OBSERVATIONS,
        });
    }
    Ok((us, ys))
}

/// Local-linear smooth of `raw` evaluated on `grid_size` equispaced points of
/// normalized time. `bandwidth` is a fraction of the curve's time span.
/// Missing readings are dropped from the local fits.
pub fn smooth_curve(raw: &RawCurve, bandwidth: f64, grid_size: usize) -> Result<SampledCurve> {
    if !(bandwidth > 0.0 && bandwidth <= 0.5) {
        return Err(Error::InvalidInput(alloc::format!(
            "bandwidth {bandwidth} outside (0, 0.5]"
        )));
    }
    if grid_size < 4 {
        return Err(Error::InvalidInput(alloc::format!("grid_size {grid_size} < 4")));
    }
    let (us, ys) = usable_checked(raw)?;
    let grid = uniform_grid(grid_size);
    let values = grid
        .iter()
        .map(|&x| {
            local_linear(&us, &ys, x, bandwidth, None).ok_or(Error::SingularFit {
                id: raw.id.clone(),
                at: x,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampledCurve {
        id: raw.id.clone(),
        grid,
        values,
        duration: raw.duration(),
        covariates: raw.covariates.clone(),
    })
}

/// Smooth with either a fixed or a cross-validated bandwidth.
pub fn smooth_with_mode(raw: &RawCurve, mode: BandwidthMode, grid_size: usize) -> Result<SampledCurve> {
    let bandwidth = match mode {
        BandwidthMode::Fixed(b) => b,
        BandwidthMode::CrossValidated => cv_bandwidth(raw)?,
    };
    smooth_curve(raw, bandwidth, grid_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn raw(times: Vec<f64>, values: Vec<Option<f64>>) -> RawCurve {
        RawCurve::new("c", times, values, BTreeMap::new()).unwrap()
    }

    #[test]
    fn linear_input_reproduced() {
        let times: Vec<f64> = (0..20).map(|i| 0.3 + 0.011 * i as f64).collect();
        let values = times.iter().map(|t| Some(150.0 + 40.0 * t)).collect();
        let c = raw(times.clone(), values);
        for bw in [0.05, 0.2, 0.5] {
            let s = smooth_curve(&c, bw, 16).unwrap();
            assert_eq!(s.values.len(), 16);
            for (u, v) in s.grid.iter().zip(&s.values) {
                let t = 0.3 + u * (times[19] - 0.3);
                assert!((v - (150.0 + 40.0 * t)).abs() < 1e-9, "{v}");
            }
        }
    }

    #[test]
    fn duration_in_tens_of_ms() {
        let times: Vec<f64> = (0..5).map(|i| 0.05 * i as f64).collect();
        let c = raw(times, vec![Some(1.0); 5]);
        assert!((c.duration() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let c = raw(vec![0.0, 0.1, 0.2, 0.3, 0.4], vec![Some(1.0), None, Some(2.0), None, Some(3.0)]);
        assert!(matches!(
            smooth_curve(&c, 0.05, 16),
            Err(Error::TooFewPoints { usable: 3, .. })
        ));
    }

    #[test]
    fn tiny_bandwidth_is_singular() {
        let times: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let c = raw(times, (0..6).map(|i| Some(i as f64)).collect());
        assert!(matches!(smooth_curve(&c, 1e-4, 16), Err(Error::SingularFit { .. })));
    }

    #[test]
    fn screening_thresholds() {
        let c16 = raw((0..16).map(|i| i as f64).collect(), vec![Some(1.0); 16]);
        assert!(screen_missing(&c16, 0.05));
        let mut v = vec![Some(1.0); 16];
        v[0] = None;
        let c16m = raw((0..16).map(|i| i as f64).collect(), v);
        assert!(!screen_missing(&c16m, 0.05));
        let mut v = vec![Some(1.0); 100];
        for k in 0..4 {
            v[k * 10] = None;
        }
        let c100 = raw((0..100).map(|i| i as f64).collect(), v);
        assert!(screen_missing(&c100, 0.05));
    }

    #[test]
    fn rejects_unsorted_times() {
        assert!(RawCurve::new("x", vec![0.0, 0.0, 1.0], vec![Some(1.0); 3], BTreeMap::new()).is_err());
    }

    #[test]
    fn cv_candidates_span() {
        let c = cv_candidates();
        assert!((c[0] - 0.02).abs() < 1e-12 && (c[9] - 0.3).abs() < 1e-12);
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn cv_picks_a_candidate() {
        let times: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let values = times
            .iter()
            .enumerate()
            .map(|(i, t)| Some((6.0 * t).sin() + if i % 2 == 0 { 0.05 } else { -0.05 }))
            .collect();
        let c = raw(times, values);
        let b = cv_bandwidth(&c).unwrap();
        assert!(cv_candidates().contains(&b));
        let s = smooth_with_mode(&c, BandwidthMode::CrossValidated, 16).unwrap();
        assert_eq!(s.values.len(), 16);
    }
}
