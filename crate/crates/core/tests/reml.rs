use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use warpfit_core::mvlme::oracle::{dense_gls_fixed, dense_reml_deviance};
use warpfit_core::mvlme::{
    fit, CovLayout, Criterion, FitOptions, Mask, ModelSpec, ProfiledDeviance, RandomFactor,
};
use warpfit_core::rng::{substream, Rng};

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct Instance {
    spec: ModelSpec,
    a: DMatrix<f64>,
    layout: CovLayout,
}

fn random_instance(seed: u64) -> Instance {
    let mut rng = substream(seed, &["reml-instance"]);
    let p = rng.random_range(1..=3usize);
    let n = rng.random_range(20..=200usize);
    let nf = rng.random_range(1..=2usize);
    let mut factors = Vec::new();
    for f in 0..nf {
        let l = if f == 0 { rng.random_range(2..=6usize) } else { rng.random_range(3..=12usize) };
        let index: Vec<usize> = (0..n).map(|_| rng.random_range(0..l)).collect();
        factors.push(RandomFactor {
            name: format!("f{f}"),
            levels: (0..l).map(|g| format!("g{g}")).collect(),
            index,
        });
    }
    let with_cat = rng.random_bool(0.5);
    let k = if with_cat { 3 } else { 2 };
    let x = DMatrix::from_fn(n, k, |i, c| match c {
        0 => 1.0,
        1 => (i as f64 / n as f64) * 2.0 - 1.0,
        _ => ((i * 7) % 3 == 0) as u8 as f64,
    });
    let masks: Vec<Mask> = (0..nf)
        .map(|_| match (p, rng.random_range(0..3)) {
            (3, 0) => Mask::block_orthogonal(&[2, 1]),
            (3, 1) => Mask::block_orthogonal(&[1, 2]),
            (_, 2) => Mask::diagonal(p),
            _ => Mask::full(p),
        })
        .collect();
    let mut a = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
    for f in &factors {
        let effects: Vec<Vec<f64>> = f.levels.iter().map(|_| (0..p).map(|_| normal(&mut rng)).collect()).collect();
        for i in 0..n {
            for j in 0..p {
                a[(i, j)] += effects[f.index[i]][j] + (j as f64 + 1.0) * x[(i, 1)];
            }
        }
    }
    let names = (0..p).map(|j| format!("y{j}")).collect();
    let scalar = rng.random_bool(0.3);
    let layout = CovLayout::new(p, masks.clone(), scalar).unwrap();
    let x_names = (0..k).map(|c| format!("x{c}")).collect();
    Instance {
        spec: ModelSpec::new(x, x_names, factors, masks, names).unwrap(),
        a,
        layout,
    }
}

fn perturbed(layout: &CovLayout, a: &DMatrix<f64>, rng: &mut Rng) -> Vec<f64> {
    let vars: Vec<f64> = (0..a.ncols()).map(|j| a.column(j).variance()).collect();
    layout
        .initial(&vars)
        .iter()
        .map(|t| t + 0.3 * normal(rng))
        .collect()
}

#[test]
fn structured_deviance_matches_dense_oracle() {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let inst = random_instance(seed);
        let mut rng = substream(seed, &["theta"]);
        let t1 = perturbed(&inst.layout, &inst.a, &mut rng);
        let t2 = perturbed(&inst.layout, &inst.a, &mut rng);
        let prof = ProfiledDeviance::new(&inst.spec, &inst.a, inst.layout.clone(), Criterion::Reml).unwrap();
        let d = prof.deviance(&t1).unwrap() - prof.deviance(&t2).unwrap();
        let o = dense_reml_deviance(&inst.spec, &inst.a, &inst.layout, &t1).unwrap()
            - dense_reml_deviance(&inst.spec, &inst.a, &inst.layout, &t2).unwrap();
        worst = worst.max((d - o).abs());
        assert!((d - o).abs() < 1e-6, "seed {seed}: structured {d} dense {o}");
    }
    assert!(worst < 1e-6);
}

#[test]
fn fixed_effects_match_generalized_least_squares() {
    for seed in 100..110 {
        let inst = random_instance(seed);
        let mut rng = substream(seed, &["theta"]);
        let t = perturbed(&inst.layout, &inst.a, &mut rng);
        let prof = ProfiledDeviance::new(&inst.spec, &inst.a, inst.layout.clone(), Criterion::Reml).unwrap();
        let cond = prof.evaluate(&t).unwrap();
        let gls = dense_gls_fixed(&inst.spec, &inst.a, &inst.layout, &t).unwrap();
        let diff = (&cond.fixed - &gls).abs().max();
        assert!(diff < 1e-8 * (1.0 + gls.abs().max()), "seed {seed}: {diff}");
    }
}

// Balanced one-way layout: a groups of n observations, intercept only.
fn one_way(a_groups: usize, n_per: usize, seed: u64) -> (ModelSpec, DMatrix<f64>, Vec<f64>) {
    let mut rng = substream(seed, &["one-way"]);
    let n = a_groups * n_per;
    let index: Vec<usize> = (0..n).map(|i| i / n_per).collect();
    let effects: Vec<f64> = (0..a_groups).map(|_| 2.0 * normal(&mut rng)).collect();
    let y: Vec<f64> = (0..n).map(|i| 5.0 + effects[index[i]] + normal(&mut rng)).collect();
    let spec = ModelSpec::new(
        DMatrix::from_element(n, 1, 1.0),
        vec!["(Intercept)".into()],
        vec![RandomFactor {
            name: "g".into(),
            levels: (0..a_groups).map(|g| g.to_string()).collect(),
            index,
        }],
        vec![Mask::full(1)],
        vec!["y".into()],
    )
    .unwrap();
    (spec, DMatrix::from_column_slice(n, 1, &y), y)
}

fn sums_of_squares(y: &[f64], a_groups: usize, n_per: usize) -> (f64, f64) {
    let grand = y.iter().sum::<f64>() / y.len() as f64;
    let mut ssw = 0.0;
    let mut ssb = 0.0;
    for g in 0..a_groups {
        let grp = &y[g * n_per..(g + 1) * n_per];
        let m = grp.iter().sum::<f64>() / n_per as f64;
        ssw += grp.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
        ssb += n_per as f64 * (m - grand) * (m - grand);
    }
    (ssw, ssb)
}

#[test]
fn one_way_deviance_matches_closed_form() {
    let (a_groups, n_per) = (5, 10);
    let (spec, a, y) = one_way(a_groups, n_per, 3);
    let (ssw, ssb) = sums_of_squares(&y, a_groups, n_per);
    let layout = CovLayout::new(1, vec![Mask::full(1)], false).unwrap();
    let prof = ProfiledDeviance::new(&spec, &a, layout, Criterion::Reml).unwrap();
    let n = (a_groups * n_per) as f64;
    for s in [0.1, 0.5, 1.0, 3.0] {
        let rho = s * s;
        let tau = 1.0 + n_per as f64 * rho;
        let sigma2 = (ssw + ssb / tau) / (n - 1.0);
        let closed = (n - 1.0) * ((2.0 * std::f64::consts::PI).ln() + 1.0 + sigma2.ln())
            + (a_groups as f64 - 1.0) * tau.ln()
            + n.ln();
        let ours = prof.deviance(&[s]).unwrap();
        assert!((ours - closed).abs() < 1e-8, "s={s}: {ours} vs {closed}");
    }
}

#[test]
fn one_way_estimate_matches_closed_form() {
    let (a_groups, n_per) = (5, 10);
    let (spec, a, y) = one_way(a_groups, n_per, 4);
    let (ssw, ssb) = sums_of_squares(&y, a_groups, n_per);
    let msw = ssw / (a_groups * (n_per - 1)) as f64;
    let msb = ssb / (a_groups - 1) as f64;
    assert!(msb > msw);
    let between = (msb - msw) / n_per as f64;
    let model = fit(
        &spec,
        &a,
        &FitOptions {
            tol: 1e-9,
            max_evals: 2000,
            ..FitOptions::default()
        },
    )
    .unwrap();
    let est = model.random[0].covariance[(0, 0)];
    assert!((est - between).abs() < 1e-8 * (1.0 + between), "{est} vs {between}");
    assert!((model.residual_variances[0] - msw).abs() < 1e-8 * (1.0 + msw));
}

#[test]
fn deviance_is_invariant_to_row_order_and_level_labels() {
    let inst = random_instance(7);
    let n = inst.spec.n();
    let perm: Vec<usize> = (0..n).map(|i| (i * 37 + 11) % n).collect();
    let mut sorted = perm.clone();
    sorted.sort_unstable();
    sorted.dedup();
    assert_eq!(sorted.len(), n, "not a permutation");
    let x = DMatrix::from_fn(n, inst.spec.k(), |i, c| inst.spec.x[(perm[i], c)]);
    let a = DMatrix::from_fn(n, inst.a.ncols(), |i, c| inst.a[(perm[i], c)]);
    let factors = inst
        .spec
        .factors
        .iter()
        .map(|f| {
            let l = f.levels.len();
            RandomFactor {
                name: f.name.clone(),
                levels: f.levels.iter().rev().cloned().collect(),
                index: (0..n).map(|i| l - 1 - f.index[perm[i]]).collect(),
            }
        })
        .collect();
    let spec2 = ModelSpec::new(
        x,
        inst.spec.x_names.clone(),
        factors,
        inst.spec.masks.clone(),
        inst.spec.response_names.clone(),
    )
    .unwrap();
    let mut rng = substream(7, &["theta"]);
    let t = perturbed(&inst.layout, &inst.a, &mut rng);
    let d1 = ProfiledDeviance::new(&inst.spec, &inst.a, inst.layout.clone(), Criterion::Reml)
        .unwrap()
        .deviance(&t)
        .unwrap();
    let d2 = ProfiledDeviance::new(&spec2, &a, inst.layout.clone(), Criterion::Reml)
        .unwrap()
        .deviance(&t)
        .unwrap();
    assert!((d1 - d2).abs() < 1e-9 * d1.abs(), "{d1} vs {d2}");
}

#[test]
fn zero_random_variance_reduces_to_least_squares() {
    let inst = random_instance(21);
    let p = inst.a.ncols();
    let layout = CovLayout::new(p, inst.spec.masks.clone(), true).unwrap();
    let theta = vec![0.0; layout.len()];
    let prof = ProfiledDeviance::new(&inst.spec, &inst.a, layout.clone(), Criterion::Reml).unwrap();
    let cond = prof.evaluate(&theta).unwrap();
    // ordinary least squares per component
    let x = &inst.spec.x;
    let ols = (x.transpose() * x).try_inverse().unwrap() * x.transpose() * &inst.a;
    assert!((&cond.fixed - &ols).abs().max() < 1e-6);
    let resid = &inst.a - x * &ols;
    let sigma2 = resid.norm_squared() / (p * (inst.spec.n() - inst.spec.k())) as f64;
    assert!((cond.sigma2 - sigma2).abs() < 1e-6 * sigma2);
}

#[test]
fn huge_random_variance_gives_unshrunk_group_deviations() {
    let (spec, a, y) = one_way(4, 6, 11);
    let layout = CovLayout::new(1, vec![Mask::full(1)], false).unwrap();
    let prof = ProfiledDeviance::new(&spec, &a, layout, Criterion::Reml).unwrap();
    let cond = prof.evaluate(&[1e4]).unwrap();
    let grand = y.iter().sum::<f64>() / y.len() as f64;
    for g in 0..4 {
        let m = y[g * 6..(g + 1) * 6].iter().sum::<f64>() / 6.0;
        assert!((cond.blups[0][(g, 0)] - (m - grand)).abs() < 1e-5);
    }
}

#[test]
fn ml_deviance_is_finite_and_below_reml_for_same_theta() {
    let inst = random_instance(5);
    let mut rng = substream(5, &["theta"]);
    let t = perturbed(&inst.layout, &inst.a, &mut rng);
    let reml = ProfiledDeviance::new(&inst.spec, &inst.a, inst.layout.clone(), Criterion::Reml)
        .unwrap()
        .deviance(&t)
        .unwrap();
    let ml = ProfiledDeviance::new(&inst.spec, &inst.a, inst.layout.clone(), Criterion::Ml)
        .unwrap()
        .deviance(&t)
        .unwrap();
    assert!(ml.is_finite() && reml.is_finite());
    assert_ne!(ml, reml);
}
