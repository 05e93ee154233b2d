use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use warpfit_core::mvlme::{correlation_from_covariance, correlation_report, fit, FitOptions, Mask, ModelSpec, RandomFactor};
use warpfit_core::rng::{substream, Rng};

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

// Fully crossed balanced design: every speaker reads every sentence `reps` times.
fn crossed(speakers: usize, sentences: usize, reps: usize) -> (Vec<usize>, Vec<usize>) {
    let mut spk = Vec::new();
    let mut sen = Vec::new();
    for s in 0..speakers {
        for t in 0..sentences {
            for _ in 0..reps {
                spk.push(s);
                sen.push(t);
            }
        }
    }
    (spk, sen)
}

fn spec_for(spk: &[usize], sen: &[usize], l1: usize, l2: usize, masks: Vec<Mask>, p: usize) -> ModelSpec {
    let n = spk.len();
    let x = DMatrix::from_fn(n, 2, |i, c| if c == 0 { 1.0 } else { ((i * 13) % 7) as f64 / 7.0 });
    ModelSpec::new(
        x,
        vec!["(Intercept)".into(), "x".into()],
        vec![
            RandomFactor {
                name: "Speaker".into(),
                levels: (0..l1).map(|l| format!("s{l}")).collect(),
                index: spk.to_vec(),
            },
            RandomFactor {
                name: "Sentence".into(),
                levels: (0..l2).map(|l| format!("t{l}")).collect(),
                index: sen.to_vec(),
            },
        ],
        masks,
        (0..p).map(|j| format!("y{j}")).collect(),
    )
    .unwrap()
}

fn draw_effects(rng: &mut Rng, levels: usize, sds: &[f64], corr: &DMatrix<f64>) -> DMatrix<f64> {
    let p = sds.len();
    let cov = DMatrix::from_fn(p, p, |i, j| sds[i] * sds[j] * corr[(i, j)]);
    let l = cov.cholesky().unwrap().l();
    DMatrix::from_fn(levels, p, |_, _| normal(rng)) * l.transpose()
}

#[test]
fn pure_fixed_effects_shrink_random_sds() {
    let (l1, l2, reps) = (8, 12, 3);
    let (spk, sen) = crossed(l1, l2, reps);
    let n = spk.len();
    let p = 2;
    let mut rng = substream(1, &["null"]);
    let mut e = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
    // remove every speaker and sentence mean so the data carry no
    // level-to-level variation at all
    for _ in 0..50 {
        for (index, levels) in [(&spk, l1), (&sen, l2)] {
            for j in 0..p {
                let mut sum = vec![0.0; levels];
                let mut count = vec![0.0; levels];
                for i in 0..n {
                    sum[index[i]] += e[(i, j)];
                    count[index[i]] += 1.0;
                }
                for i in 0..n {
                    e[(i, j)] -= sum[index[i]] / count[index[i]];
                }
            }
        }
    }
    let spec = spec_for(&spk, &sen, l1, l2, vec![Mask::full(p), Mask::full(p)], p);
    let a = DMatrix::from_fn(n, p, |i, j| 3.0 + j as f64 - 2.0 * spec.x[(i, 1)] + e[(i, j)]);
    let model = fit(&spec, &a, &FitOptions::default()).unwrap();
    for re in &model.random {
        for (j, sd) in re.sds().iter().enumerate() {
            assert!(*sd < 0.05 * model.residual_variances[j].sqrt(), "{} component {j}: sd {sd}", re.name);
        }
    }
}

#[test]
fn masked_entries_are_exact_zeros_and_blups_are_centered() {
    let (l1, l2, reps) = (10, 15, 2);
    let (spk, sen) = crossed(l1, l2, reps);
    let n = spk.len();
    let p = 3;
    let mut rng = substream(2, &["mask"]);
    let corr = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.5, 0.0, 1.0, -0.4, 0.5, -0.4, 1.0]);
    let g1 = draw_effects(&mut rng, l1, &[2.0, 1.0, 1.5], &corr);
    let g2 = draw_effects(&mut rng, l2, &[1.0, 0.7, 1.2], &corr);
    let mask = Mask::block_orthogonal(&[2, 1]);
    let spec = spec_for(&spk, &sen, l1, l2, vec![mask.clone(), mask.clone()], p);
    let a = DMatrix::from_fn(n, p, |i, j| 10.0 * j as f64 + g1[(spk[i], j)] + g2[(sen[i], j)] + normal(&mut rng));
    let model = fit(&spec, &a, &FitOptions::default()).unwrap();
    for re in &model.random {
        assert_eq!(re.covariance[(0, 1)], 0.0);
        assert_eq!(re.covariance[(1, 0)], 0.0);
    }
    for c in correlation_report(&model) {
        assert_eq!(c.values[0][1], Some(0.0));
        assert_eq!(c.values[1][0], Some(0.0));
        for j in 0..p {
            assert_eq!(c.values[j][j], Some(1.0));
        }
        for row in &c.values {
            for v in row.iter().flatten() {
                assert!((-1.0..=1.0).contains(v));
            }
        }
    }
    // balanced crossing: conditional modes sum to zero per component
    for re in &model.random {
        for j in 0..p {
            let col = re.blups.column(j);
            let mean = col.mean();
            let sd = col.variance().sqrt();
            assert!(mean.abs() < 1e-6 * sd.max(1e-12), "{} {j}: mean {mean} sd {sd}", re.name);
        }
    }
    assert!(!model.convergence.clamped);
}

#[test]
fn diagonal_covariance_gives_identity_correlation() {
    let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0, 0.25]));
    let c = correlation_from_covariance(&cov, &Mask::full(3));
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(c[i][j], Some(if i == j { 1.0 } else { 0.0 }));
        }
    }
}

#[test]
fn small_recovery_study() {
    let (l1, l2, reps) = (15, 20, 2);
    let (spk, sen) = crossed(l1, l2, reps);
    let n = spk.len();
    let p = 2;
    let sd1 = [2.0, 1.0];
    let sd2 = [1.5, 0.8];
    let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0]);
    let mut errors = Vec::new();
    let mut signs = 0;
    let reps_mc = 12;
    for r in 0..reps_mc {
        let mut rng = substream(r, &["recovery"]);
        let g1 = draw_effects(&mut rng, l1, &sd1, &corr);
        let g2 = draw_effects(&mut rng, l2, &sd2, &corr);
        let spec = spec_for(&spk, &sen, l1, l2, vec![Mask::full(p), Mask::full(p)], p);
        let a = DMatrix::from_fn(n, p, |i, j| g1[(spk[i], j)] + g2[(sen[i], j)] + (1.0 + j as f64) * normal(&mut rng));
        let model = fit(&spec, &a, &FitOptions::default()).unwrap();
        let est1 = model.random[0].sds();
        let est2 = model.random[1].sds();
        errors.push(((est1[0] - 2.0) / 2.0).abs());
        errors.push(((est2[1] - 0.8) / 0.8).abs());
        errors.push(((model.residual_variances[1].sqrt() - 2.0) / 2.0).abs());
        if model.random[1].covariance[(0, 1)] > 0.0 {
            signs += 1;
        }
    }
    errors.sort_by(f64::total_cmp);
    let median = errors[errors.len() / 2];
    assert!(median < 0.25, "median relative error {median}");
    assert!(signs >= reps_mc * 3 / 4, "{signs} of {reps_mc}");
}
