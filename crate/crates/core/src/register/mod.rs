//! Time-warp estimation: penalized pairwise alignment within a class,
//! averaging of pairwise warps, inversion, and the area-under-curve
//! alternative.

mod pairwise;
mod warp;

pub use pairwise::{pairwise_warp_values, warp_cost, PairwiseWarp, WarpOptions};
pub use warp::{average_warps, invert_warp, WarpingFunction};

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index;

use crate::error::{Error, Result};
use crate::prep::SampledCurve;
use crate::quad::interp_uniform;
use crate::rng::substream;

/// Candidate penalty multipliers for automatic selection, applied to the
/// class's pooled within-curve variance.
pub const LAMBDA_MULTIPLIERS: [f64; 5] = [0.0, 1e-2, 1e-1, 1.0, 10.0];

/// Median pilot distortion that an automatically chosen penalty must reach.
pub const LAMBDA_DISTORTION_TARGET: f64 = 0.01;

const LAMBDA_PILOT_PAIRS: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationOptions {
    pub lambda: Lambda,
    pub nstar: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        Self {
            lambda: Lambda::Auto,
            nstar: 30,
            seed: 0,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

/// Per-curve registration output.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    pub id: String,
    pub class: String,
    /// Warp of normalized time such that `w(u) = y(h(u))`.
    pub h: WarpingFunction,
    pub h_inverse: WarpingFunction,
    /// Registered amplitude curve on the common grid.
    pub w: Vec<f64>,
    pub lambda: f64,
    pub nstar: usize,
    /// The curve was flat, so its warp was set to the identity.
    pub degenerate: bool,
}

/// Registered curve `w(u_j) = y(h(u_j))` by linear interpolation of `y`.
pub fn registered_curve(values: &[f64], h: &WarpingFunction) -> Vec<f64> {
    h.values().iter().map(|&x| interp_uniform(values, x)).collect()
}

fn check_pool(curves: &[SampledCurve]) -> Result<usize> {
    let first = curves.first().ok_or(Error::EmptyPool)?;
    let n = first.values.len();
    if let Some(c) = curves.iter().find(|c| c.values.len() != n) {
        return Err(Error::GridMismatch {
            expected: n,
            found: c.values.len(),
        });
    }
    Ok(n)
}

fn sorted_by_id(curves: &[SampledCurve]) -> Result<Vec<&SampledCurve>> {
    let mut sorted: Vec<&SampledCurve> = curves.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::InvalidInput(alloc::format!("duplicate curve id {}", w[0].id)));
    }
    Ok(sorted)
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean over curves of the variance of each curve's grid values.
pub fn pooled_within_variance(curves: &[SampledCurve]) -> f64 {
    if curves.is_empty() {
        return 0.0;
    }
    let total: f64 = curves
        .iter()
        .map(|c| {
            let n = c.values.len() as f64;
            let mean = c.values.iter().sum::<f64>() / n;
            c.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        })
        .sum();
    total / curves.len() as f64
}

/// A registration class with everything resolved that does not depend on
/// the individual curve: sorted pool, penalty and flatness threshold.
///
/// Curves can then be registered independently (and in parallel) with
/// [`ClassPlan::register`].
#[derive(Debug, Clone)]
pub struct ClassPlan {
    class: String,
    pool: Vec<SampledCurve>,
    lambda: f64,
    nstar: usize,
    seed: u64,
    flat_threshold: f64,
    warp: WarpOptions,
}

impl ClassPlan {
    pub fn new(class: &str, curves: &[SampledCurve], opts: &RegistrationOptions) -> Result<Self> {
        check_pool(curves)?;
        if opts.nstar == 0 {
            return Err(Error::InvalidInput("N* must be at least 1".into()));
        }
        let pool: Vec<SampledCurve> = sorted_by_id(curves)?.into_iter().cloned().collect();
        let flat_threshold = 1e-6 * median(pool.iter().map(SampledCurve::range).collect());
        let warp = WarpOptions {
            lambda: 0.0,
            max_iter: opts.max_iter,
            tol: opts.tol,
            flat_threshold: Some(flat_threshold),
            ..WarpOptions::default()
        };
        let mut plan = Self {
            class: class.to_string(),
            pool,
            lambda: 0.0,
            nstar: opts.nstar,
            seed: opts.seed,
            flat_threshold,
            warp,
        };
        plan.lambda = match opts.lambda {
            Lambda::Fixed(l) if l >= 0.0 && l.is_finite() => l,
            Lambda::Fixed(_) => {
                return Err(Error::InvalidInput("penalty must be finite and non-negative".into()))
            }
            Lambda::Auto => plan.auto_lambda()?,
        };
        plan.warp.lambda = plan.lambda;
        Ok(plan)
    }

    pub fn class(&self) -> &str {
        &self.class
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    /// Pool curves in id order.
    pub fn curves(&self) -> &[SampledCurve] {
        &self.pool
    }

    // Pilot pairs: each of up to LAMBDA_PILOT_PAIRS evenly spread curves is
    // aligned to its successor in id order.
    fn auto_lambda(&self) -> Result<f64> {
        let n = self.pool.len();
        if n < 2 {
            return Ok(0.0);
        }
        let pairs = n.min(LAMBDA_PILOT_PAIRS);
        let scale = pooled_within_variance(&self.pool);
        let mut chosen = LAMBDA_MULTIPLIERS[LAMBDA_MULTIPLIERS.len() - 1] * scale;
        for mult in LAMBDA_MULTIPLIERS {
            let lambda = mult * scale;
            let opts = WarpOptions {
                lambda,
                ..self.warp.clone()
            };
            let mut distortions = Vec::with_capacity(pairs);
            for p in 0..pairs {
                let i = p * n / pairs;
                let k = (i + 1) % n;
                let r = pairwise_warp_values(&self.pool[i].values, &self.pool[k].values, &opts)?;
                distortions.push(r.warp.distortion());
            }
            if median(distortions) < LAMBDA_DISTORTION_TARGET {
                chosen = lambda;
                break;
            }
        }
        Ok(chosen)
    }

    /// Indices (into the id-sorted pool) of the curves used as references
    /// for curve `index`: itself plus `N* - 1` others drawn without
    /// replacement from a stream keyed by the seed and the curve id.
    pub fn references(&self, index: usize) -> Vec<usize> {
        let n = self.pool.len();
        if self.nstar >= n {
            return (0..n).collect();
        }
        let mut rng = substream(self.seed, &["register", &self.pool[index].id]);
        let mut picked: Vec<usize> = index::sample(&mut rng, n - 1, self.nstar - 1)
            .into_iter()
            .map(|k| if k >= index { k + 1 } else { k })
            .collect();
        picked.push(index);
        picked.sort_unstable();
        picked
    }

    /// Estimate of `h^{-1}` for curve `index` as the mean of its pairwise
    /// warps against the sampled references.
    pub fn estimate_h_inverse(&self, index: usize) -> Result<WarpingFunction> {
        let target = &self.pool[index].values;
        let mut warps = Vec::new();
        for k in self.references(index) {
            if k == index {
                warps.push(WarpingFunction::identity(target.len()));
                continue;
            }
            let r = pairwise_warp_values(target, &self.pool[k].values, &self.warp)?;
            warps.push(r.warp);
        }
        average_warps(&warps)
    }

    /// Registers pool curve `index` (id order).
    pub fn register(&self, index: usize) -> Result<RegistrationResult> {
        let curve = &self.pool[index];
        let degenerate = curve.range() <= self.flat_threshold;
        let h_inverse = if degenerate || self.pool.len() == 1 {
            WarpingFunction::identity(curve.values.len())
        } else {
            self.estimate_h_inverse(index)?
        };
        let h = invert_warp(&h_inverse)?;
        let w = registered_curve(&curve.values, &h);
        Ok(RegistrationResult {
            id: curve.id.clone(),
            class: self.class.clone(),
            h,
            h_inverse,
            w,
            lambda: self.lambda,
            nstar: self.nstar.min(self.pool.len()),
            degenerate,
        })
    }
}

/// Pairwise registration of one class. Results come back in id order.
pub fn register_class(
    class: &str,
    curves: &[SampledCurve],
    opts: &RegistrationOptions,
) -> Result<Vec<RegistrationResult>> {
    let plan = ClassPlan::new(class, curves, opts)?;
    (0..plan.len()).map(|i| plan.register(i)).collect()
}

/// `h^{-1}` estimate for the curve with id `id` within `pool`.
pub fn estimate_h_inverse(
    id: &str,
    pool: &[SampledCurve],
    lambda: f64,
    nstar: usize,
    seed: u64,
) -> Result<WarpingFunction> {
    let plan = ClassPlan::new(
        "",
        pool,
        &RegistrationOptions {
            lambda: Lambda::Fixed(lambda),
            nstar,
            seed,
            ..RegistrationOptions::default()
        },
    )?;
    let index = plan
        .pool
        .iter()
        .position(|c| c.id == id)
        .ok_or_else(|| Error::InvalidInput(alloc::format!("curve {id} is not in the pool")))?;
    plan.estimate_h_inverse(index)
}

/// Area-under-curve registration: `h^{-1}` is the normalized cumulative
/// integral of the curve. Results come back in id order.
pub fn register_auc(class: &str, curves: &[SampledCurve]) -> Result<Vec<RegistrationResult>> {
    check_pool(curves)?;
    let sorted = sorted_by_id(curves)?;
    sorted
        .into_iter()
        .map(|c| {
            let h_inverse = auc_warp(c)?;
            let h = invert_warp(&h_inverse)?;
            Ok(RegistrationResult {
                id: c.id.clone(),
                class: class.to_string(),
                w: registered_curve(&c.values, &h),
                h,
                h_inverse,
                lambda: 0.0,
                nstar: 1,
                degenerate: false,
            })
        })
        .collect()
}

/// Normalized cumulative trapezoidal integral of a positive curve.
pub fn auc_warp(curve: &SampledCurve) -> Result<WarpingFunction> {
    let y = &curve.values;
    if y.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::NonPositiveCurve(curve.id.clone()));
    }
    let n = y.len();
    let mut cum = Vec::with_capacity(n);
    cum.push(0.0);
    let mut acc = 0.0;
    for j in 1..n {
        acc += 0.5 * (y[j - 1] + y[j]);
        cum.push(acc);
    }
    let total = acc;
    let mut values: Vec<f64> = cum.iter().map(|c| c / total).collect();
    values[n - 1] = 1.0;
    WarpingFunction::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::uniform_grid;
    use alloc::vec;

    fn curve(id: &str, values: Vec<f64>) -> SampledCurve {
        SampledCurve::new(id, values, 20.0).unwrap()
    }

    #[test]
    fn single_curve_class_is_identity() {
        let c = curve("a", uniform_grid(16).iter().map(|t| 100.0 + 20.0 * t).collect());
        let r = register_class("1", &[c.clone()], &RegistrationOptions::default()).unwrap();
        assert!(r[0].h.is_identity());
        assert_eq!(r[0].w, c.values);
    }

    #[test]
    fn identical_pool_gives_identity() {
        let v: Vec<f64> = uniform_grid(16).iter().map(|t| 100.0 + 20.0 * (3.0 * t).sin()).collect();
        let pool = vec![curve("a", v.clone()), curve("b", v.clone()), curve("c", v)];
        let h = estimate_h_inverse("b", &pool, 0.0, 30, 1).unwrap();
        assert!(h.is_identity());
    }

    #[test]
    fn references_include_self_and_respect_nstar() {
        let pool: Vec<SampledCurve> = (0..50)
            .map(|i| curve(&alloc::format!("c{i:02}"), vec![100.0 + i as f64, 101.0, 99.0, 100.0]))
            .collect();
        let plan = ClassPlan::new(
            "t",
            &pool,
            &RegistrationOptions {
                lambda: Lambda::Fixed(0.0),
                nstar: 30,
                seed: 9,
                ..Default::default()
            },
        )
        .unwrap();
        for i in [0, 17, 49] {
            let refs = plan.references(i);
            assert_eq!(refs.len(), 30);
            assert!(refs.contains(&i));
            assert!(refs.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn auc_closed_form() {
        let n = 16;
        let grid = uniform_grid(n);
        let c = curve("r", grid.iter().map(|t| 1.0 + t).collect());
        let h = auc_warp(&c).unwrap();
        for (v, t) in h.values().iter().zip(&grid) {
            assert!((v - (t + t * t / 2.0) / 1.5).abs() < 1e-14);
        }
        let flat = curve("f", vec![5.0; n]);
        assert!(auc_warp(&flat).unwrap().sup_distance(&WarpingFunction::identity(n)) < 1e-15);
        let bad = curve("z", vec![1.0, 0.0, 1.0, 2.0]);
        assert_eq!(auc_warp(&bad), Err(Error::NonPositiveCurve("z".into())));
    }
}
