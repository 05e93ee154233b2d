//! Profiled (restricted) deviance by penalized least squares.
//!
//! With residual covariance `sigma^2 diag(d)`, responses are whitened by
//! `d^{-1/2}` so the model becomes homoscedastic with relative random-effect
//! covariances `Xi_r = L_r L_r^T`. Random effects are written `L_r v`, and
//! the deviance follows from the Cholesky factor of the penalized normal
//! equations in `(v, vec(B))` augmented by the response.
//!
//! The factor with the most levels is eliminated first. Its diagonal blocks
//! only depend on the level's observation count, so its Schur complement is
//! accumulated from statistics grouped by count and never touches
//! individual levels. The remaining factors and the fixed effects form a
//! small dense system.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use super::cov::{CovLayout, Expanded};
use super::ModelSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Criterion {
    #[default]
    Reml,
    Ml,
}

#[derive(Debug, Clone)]
struct DenseFactor {
    spec_index: usize,
    levels: usize,
    counts: Vec<f64>,
    ztx: DMatrix<f64>,
    zta: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct SizeGroup {
    n: f64,
    count: usize,
    s: DMatrix<f64>,
    t: DMatrix<f64>,
    u: DMatrix<f64>,
    // indexed [r][s] over dense factors
    c: Vec<Vec<DMatrix<f64>>>,
    e: Vec<DMatrix<f64>>,
    f: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
struct LargeFactor {
    spec_index: usize,
    counts: Vec<usize>,
    ztx: DMatrix<f64>,
    zta: DMatrix<f64>,
    // per dense factor, per level: (dense level, count)
    cross: Vec<Vec<Vec<(usize, f64)>>>,
    groups: Vec<SizeGroup>,
}

/// Parameter-independent sufficient statistics of one model.
#[derive(Debug, Clone)]
pub struct ProfiledDeviance {
    n: usize,
    k: usize,
    p: usize,
    x: DMatrix<f64>,
    a: DMatrix<f64>,
    factor_index: Vec<Vec<usize>>,
    xtx: DMatrix<f64>,
    xta: DMatrix<f64>,
    ata: Vec<f64>,
    large: Option<LargeFactor>,
    dense: Vec<DenseFactor>,
    // counts between dense factors r < s, stored at [r][s]
    dense_cross: Vec<Vec<Option<DMatrix<f64>>>>,
    layout: CovLayout,
    criterion: Criterion,
}

/// Conditional estimates at one parameter value (whitened scale undone).
#[derive(Debug, Clone)]
pub struct Conditional {
    pub deviance: f64,
    pub sigma2: f64,
    pub ratios: Vec<f64>,
    /// `k x p`
    pub fixed: DMatrix<f64>,
    /// Standard errors of `fixed`.
    pub fixed_se: DMatrix<f64>,
    /// Random-effect covariances, one per factor in model order.
    pub covariances: Vec<DMatrix<f64>>,
    /// Conditional modes, `levels x p`, one per factor in model order.
    pub blups: Vec<DMatrix<f64>>,
    /// Per-component residual variances `sigma^2 d_j`.
    pub residual_variances: Vec<f64>,
    /// Per-component residual variances from residuals plus spherical
    /// random-effect contributions, divided by `N - k`.
    pub conditional_residual_variances: Vec<f64>,
    pub min_eigenvalues: Vec<f64>,
}

struct System {
    h: DMatrix<f64>,
    c: DVector<f64>,
    aa: f64,
    logdet_large: f64,
    factors: Vec<DMatrix<f64>>,
    scale: Vec<f64>,
}

fn xtx_of(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.transpose() * x
}

impl ProfiledDeviance {
    pub fn new(spec: &ModelSpec, a: &DMatrix<f64>, layout: CovLayout, criterion: Criterion) -> Result<Self> {
        let n = spec.n();
        let k = spec.k();
        let p = a.ncols();
        if a.nrows() != n {
            return Err(Error::InvalidInput("response rows differ from design rows".into()));
        }
        if layout.p != p || layout.masks.len() != spec.factors.len() {
            return Err(Error::InvalidInput("covariance layout does not match the model".into()));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite response".into()));
        }
        let x = spec.x.clone();
        let xtx = xtx_of(&x);
        let xta = x.transpose() * a;
        let ata: Vec<f64> = (0..p).map(|j| a.column(j).norm_squared()).collect();

        let large_pos = spec
            .factors
            .iter()
            .enumerate()
            .max_by(|(i, f), (j, g)| f.levels.len().cmp(&g.levels.len()).then(j.cmp(i)))
            .map(|(i, _)| i);

        let mut dense = Vec::new();
        for (r, f) in spec.factors.iter().enumerate() {
            if Some(r) == large_pos {
                continue;
            }
            let l = f.levels.len();
            let mut counts = vec![0.0; l];
            let mut ztx = DMatrix::zeros(l, k);
            let mut zta = DMatrix::zeros(l, p);
            for i in 0..n {
                let h = f.index[i];
                counts[h] += 1.0;
                for c in 0..k {
                    ztx[(h, c)] += x[(i, c)];
                }
                for c in 0..p {
                    zta[(h, c)] += a[(i, c)];
                }
            }
            dense.push(DenseFactor {
                spec_index: r,
                levels: l,
                counts,
                ztx,
                zta,
            });
        }

        let nd = dense.len();
        let mut dense_cross = vec![vec![None; nd]; nd];
        for r in 0..nd {
            for s in r + 1..nd {
                let fr = &spec.factors[dense[r].spec_index];
                let fs = &spec.factors[dense[s].spec_index];
                let mut m = DMatrix::zeros(dense[r].levels, dense[s].levels);
                for i in 0..n {
                    m[(fr.index[i], fs.index[i])] += 1.0;
                }
                dense_cross[r][s] = Some(m);
            }
        }

        let large = large_pos.map(|b| {
            let f = &spec.factors[b];
            let l = f.levels.len();
            let mut counts = vec![0usize; l];
            let mut ztx = DMatrix::zeros(l, k);
            let mut zta = DMatrix::zeros(l, p);
            let mut cross_maps: Vec<Vec<BTreeMap<usize, f64>>> = vec![vec![BTreeMap::new(); l]; nd];
            for i in 0..n {
                let g = f.index[i];
                counts[g] += 1;
                for c in 0..k {
                    ztx[(g, c)] += x[(i, c)];
                }
                for c in 0..p {
                    zta[(g, c)] += a[(i, c)];
                }
                for (r, d) in dense.iter().enumerate() {
                    *cross_maps[r][g].entry(spec.factors[d.spec_index].index[i]).or_insert(0.0) += 1.0;
                }
            }
            let cross: Vec<Vec<Vec<(usize, f64)>>> = cross_maps
                .into_iter()
                .map(|per| per.into_iter().map(|m| m.into_iter().collect()).collect())
                .collect();

            let mut by_size: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (g, &c) in counts.iter().enumerate() {
                if c > 0 {
                    by_size.entry(c).or_default().push(g);
                }
            }
            let groups = by_size
                .into_iter()
                .map(|(size, members)| {
                    let mut s = DMatrix::zeros(k, k);
                    let mut t = DMatrix::zeros(p, k);
                    let mut u = DMatrix::zeros(p, p);
                    let mut cm: Vec<Vec<DMatrix<f64>>> = (0..nd)
                        .map(|r| (0..nd).map(|q| DMatrix::zeros(dense[r].levels, dense[q].levels)).collect())
                        .collect();
                    let mut e: Vec<DMatrix<f64>> = dense.iter().map(|d| DMatrix::zeros(d.levels, k)).collect();
                    let mut fm: Vec<DMatrix<f64>> = dense.iter().map(|d| DMatrix::zeros(d.levels, p)).collect();
                    for &g in &members {
                        let z = ztx.row(g).transpose();
                        let y = zta.row(g).transpose();
                        s += &z * z.transpose();
                        t += &y * z.transpose();
                        u += &y * y.transpose();
                        for r in 0..nd {
                            for &(h, nh) in &cross[r][g] {
                                for c in 0..k {
                                    e[r][(h, c)] += nh * z[c];
                                }
                                for c in 0..p {
                                    fm[r][(h, c)] += nh * y[c];
                                }
                                for q in 0..nd {
                                    for &(h2, nh2) in &cross[q][g] {
                                        cm[r][q][(h, h2)] += nh * nh2;
                                    }
                                }
                            }
                        }
                    }
                    SizeGroup {
                        n: size as f64,
                        count: members.len(),
                        s,
                        t,
                        u,
                        c: cm,
                        e,
                        f: fm,
                    }
                })
                .collect();
            LargeFactor {
                spec_index: b,
                counts,
                ztx,
                zta,
                cross,
                groups,
            }
        });

        Ok(Self {
            n,
            k,
            p,
            x,
            a: a.clone(),
            factor_index: spec.factors.iter().map(|f| f.index.clone()).collect(),
            xtx,
            xta,
            ata,
            large,
            dense,
            dense_cross,
            layout,
            criterion,
        })
    }

    pub fn layout(&self) -> &CovLayout {
        &self.layout
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    fn residual_df(&self) -> Result<f64> {
        let df = match self.criterion {
            Criterion::Reml => self.n as f64 - self.k as f64,
            Criterion::Ml => self.n as f64,
        };
        if df <= 0.0 {
            return Err(Error::RankDeficientDesign(Vec::new()));
        }
        Ok(df)
    }

    fn dense_offsets(&self) -> (Vec<usize>, usize) {
        let mut offsets = Vec::with_capacity(self.dense.len());
        let mut at = 0;
        for d in &self.dense {
            offsets.push(at);
            at += d.levels * self.p;
        }
        (offsets, at)
    }

    fn assemble(&self, e: &Expanded) -> Result<System> {
        let p = self.p;
        let k = self.k;
        let factors: Vec<DMatrix<f64>> = e
            .relative
            .iter()
            .map(|xi| {
                Cholesky::new(xi.clone())
                    .map(|c| c.l())
                    .ok_or(Error::NotPositiveDefinite)
            })
            .collect::<Result<_>>()?;
        let scale: Vec<f64> = e.ratios.iter().map(|d| 1.0 / d.sqrt()).collect();
        let whiten = DMatrix::from_diagonal(&DVector::from_vec(scale.clone()));

        let (offsets, qv) = self.dense_offsets();
        let q = qv + k * p;
        let bidx = |j: usize, l: usize| qv + j * k + l;
        let mut h = DMatrix::zeros(q, q);
        let mut c = DVector::zeros(q);
        let mut aa: f64 = (0..p).map(|j| self.ata[j] * scale[j] * scale[j]).sum();

        for j in 0..p {
            for l in 0..k {
                for l2 in 0..k {
                    h[(bidx(j, l), bidx(j, l2))] = self.xtx[(l, l2)];
                }
                c[bidx(j, l)] = self.xta[(l, j)] * scale[j];
            }
        }

        for (r, d) in self.dense.iter().enumerate() {
            let lr = &factors[d.spec_index];
            let ltl = lr.transpose() * lr;
            let ytil = &d.zta * &whiten;
            for g in 0..d.levels {
                let o = offsets[r] + g * p;
                for a1 in 0..p {
                    for a2 in 0..p {
                        h[(o + a1, o + a2)] = d.counts[g] * ltl[(a1, a2)];
                    }
                    h[(o + a1, o + a1)] += 1.0;
                }
                for col in 0..p {
                    for j in 0..p {
                        for l in 0..k {
                            let v = lr[(j, col)] * d.ztx[(g, l)];
                            h[(o + col, bidx(j, l))] = v;
                            h[(bidx(j, l), o + col)] = v;
                        }
                    }
                    c[o + col] = (0..p).map(|j| lr[(j, col)] * ytil[(g, j)]).sum();
                }
            }
            for s in r + 1..self.dense.len() {
                let ls = &factors[self.dense[s].spec_index];
                let lrs = lr.transpose() * ls;
                let counts = self.dense_cross[r][s].as_ref().expect("cross counts");
                for g in 0..d.levels {
                    for g2 in 0..self.dense[s].levels {
                        let nn = counts[(g, g2)];
                        if nn == 0.0 {
                            continue;
                        }
                        let o1 = offsets[r] + g * p;
                        let o2 = offsets[s] + g2 * p;
                        for a1 in 0..p {
                            for a2 in 0..p {
                                h[(o1 + a1, o2 + a2)] = nn * lrs[(a1, a2)];
                                h[(o2 + a2, o1 + a1)] = nn * lrs[(a1, a2)];
                            }
                        }
                    }
                }
            }
        }

        let mut logdet_large = 0.0;
        if let Some(big) = &self.large {
            let lb = &factors[big.spec_index];
            let ltl = lb.transpose() * lb;
            for grp in &big.groups {
                let hn = &ltl * grp.n + DMatrix::identity(p, p);
                let chol = Cholesky::new(hn).ok_or_else(|| Error::NumericalBreakdown("level block".into()))?;
                let lh = chol.l();
                logdet_large += grp.count as f64 * 2.0 * lh.diagonal().iter().map(|v| v.ln()).sum::<f64>();
                let m = lh
                    .solve_lower_triangular(&lb.transpose())
                    .ok_or_else(|| Error::NumericalBreakdown("level block solve".into()))?;
                let pm = m.transpose() * &m;

                for j in 0..p {
                    for j2 in 0..p {
                        let w = pm[(j, j2)];
                        for l in 0..k {
                            for l2 in 0..k {
                                h[(bidx(j, l), bidx(j2, l2))] -= w * grp.s[(l, l2)];
                            }
                        }
                    }
                }
                let tt = &whiten * &grp.t;
                let pt = &pm * &tt;
                for j in 0..p {
                    for l in 0..k {
                        c[bidx(j, l)] -= pt[(j, l)];
                    }
                }
                let uu = &whiten * &grp.u * &whiten;
                aa -= (&pm * uu).trace();

                for (r, d) in self.dense.iter().enumerate() {
                    let lr = &factors[d.spec_index];
                    let gr = lr.transpose() * &pm;
                    for (s, d2) in self.dense.iter().enumerate() {
                        let ls = &factors[d2.spec_index];
                        let krs = &gr * ls;
                        let cm = &grp.c[r][s];
                        for g in 0..d.levels {
                            for g2 in 0..d2.levels {
                                let nn = cm[(g, g2)];
                                if nn == 0.0 {
                                    continue;
                                }
                                let o1 = offsets[r] + g * p;
                                let o2 = offsets[s] + g2 * p;
                                for a1 in 0..p {
                                    for a2 in 0..p {
                                        h[(o1 + a1, o2 + a2)] -= nn * krs[(a1, a2)];
                                    }
                                }
                            }
                        }
                    }
                    let fw = &grp.f[r] * &whiten;
                    for g in 0..d.levels {
                        let o = offsets[r] + g * p;
                        for col in 0..p {
                            for j in 0..p {
                                let w = gr[(col, j)];
                                if w == 0.0 {
                                    continue;
                                }
                                for l in 0..k {
                                    let v = w * grp.e[r][(g, l)];
                                    h[(o + col, bidx(j, l))] -= v;
                                    h[(bidx(j, l), o + col)] -= v;
                                }
                            }
                            c[o + col] -= (0..p).map(|j| gr[(col, j)] * fw[(g, j)]).sum::<f64>();
                        }
                    }
                }
            }
        }
        Ok(System {
            h,
            c,
            aa,
            logdet_large,
            factors,
            scale,
        })
    }

    /// Profiled deviance at `theta`.
    pub fn deviance(&self, theta: &[f64]) -> Result<f64> {
        let e = self.layout.expand(theta)?;
        let sys = self.assemble(&e)?;
        let (dev, _, _) = self.finish(&e, sys)?;
        Ok(dev)
    }

    fn finish(&self, e: &Expanded, sys: System) -> Result<(f64, f64, Solved)> {
        let (_, qv) = self.dense_offsets();
        let q = sys.h.nrows();
        let chol = Cholesky::new(sys.h.clone())
            .ok_or_else(|| Error::NumericalBreakdown("penalized system is not positive definite".into()))?;
        let l = chol.l();
        let w = l
            .solve_lower_triangular(&sys.c)
            .ok_or_else(|| Error::NumericalBreakdown("triangular solve".into()))?;
        let rss = sys.aa - w.norm_squared();
        if !(rss > 0.0) || !rss.is_finite() {
            return Err(Error::NumericalBreakdown(alloc::format!("penalized residual sum of squares {rss}")));
        }
        let mut logdet_z = sys.logdet_large;
        let mut logdet_x = 0.0;
        for i in 0..q {
            let v = 2.0 * l[(i, i)].ln();
            if i < qv {
                logdet_z += v;
            } else {
                logdet_x += v;
            }
        }
        let df = self.residual_df()?;
        let p = self.p as f64;
        let sigma2 = rss / (p * df);
        let log_ratio: f64 = e.ratios.iter().map(|d| d.ln()).sum();
        let dev = match self.criterion {
            Criterion::Reml => {
                logdet_z + logdet_x + p * df * (1.0 + (2.0 * core::f64::consts::PI * sigma2).ln()) + df * log_ratio
            }
            Criterion::Ml => logdet_z + p * df * (1.0 + (2.0 * core::f64::consts::PI * sigma2).ln()) + df * log_ratio,
        };
        if !dev.is_finite() {
            return Err(Error::NumericalBreakdown("non-finite deviance".into()));
        }
        Ok((dev, sigma2, Solved { chol, sys }))
    }

    /// Deviance together with the conditional estimates at `theta`.
    pub fn evaluate(&self, theta: &[f64]) -> Result<Conditional> {
        let e = self.layout.expand(theta)?;
        let sys = self.assemble(&e)?;
        let (deviance, sigma2, solved) = self.finish(&e, sys)?;
        let Solved { chol, sys } = solved;
        let p = self.p;
        let k = self.k;
        let (offsets, qv) = self.dense_offsets();
        let sol = chol.solve(&sys.c);

        // whitened fixed effects, k x p
        let btil = DMatrix::from_fn(k, p, |l, j| sol[qv + j * k + l]);
        let mut v: Vec<DMatrix<f64>> = self
            .factor_index
            .iter()
            .enumerate()
            .map(|(r, _)| DMatrix::zeros(self.levels_of(r), p))
            .collect();
        for (r, d) in self.dense.iter().enumerate() {
            for g in 0..d.levels {
                for col in 0..p {
                    v[d.spec_index][(g, col)] = sol[offsets[r] + g * p + col];
                }
            }
        }
        if let Some(big) = &self.large {
            let lb = &sys.factors[big.spec_index];
            let ltl = lb.transpose() * lb;
            for (g, &ng) in big.counts.iter().enumerate() {
                if ng == 0 {
                    continue;
                }
                let mut resid = DVector::from_fn(p, |j, _| big.zta[(g, j)] * sys.scale[j]);
                let fitted = btil.transpose() * big.ztx.row(g).transpose();
                resid -= fitted;
                for (r, d) in self.dense.iter().enumerate() {
                    let lr = &sys.factors[d.spec_index];
                    for &(h, nh) in &big.cross[r][g] {
                        let vh = v[d.spec_index].row(h).transpose();
                        resid -= (lr * vh) * nh;
                    }
                }
                let hn = &ltl * ng as f64 + DMatrix::identity(p, p);
                let rhs = lb.transpose() * resid;
                let vg = Cholesky::new(hn)
                    .ok_or_else(|| Error::NumericalBreakdown("level block".into()))?
                    .solve(&rhs);
                for col in 0..p {
                    v[big.spec_index][(g, col)] = vg[col];
                }
            }
        }

        let root: Vec<f64> = e.ratios.iter().map(|d| d.sqrt()).collect();
        let fixed = DMatrix::from_fn(k, p, |l, j| btil[(l, j)] * root[j]);
        let cov_b = chol.inverse();
        let fixed_se = DMatrix::from_fn(k, p, |l, j| {
            let i = qv + j * k + l;
            (sigma2 * cov_b[(i, i)]).max(0.0).sqrt() * root[j]
        });
        let blups: Vec<DMatrix<f64>> = v
            .iter()
            .enumerate()
            .map(|(r, vr)| {
                let lr = &sys.factors[r];
                let mut g = vr * lr.transpose();
                for j in 0..p {
                    for row in 0..g.nrows() {
                        g[(row, j)] *= root[j];
                    }
                }
                g
            })
            .collect();
        let covariances: Vec<DMatrix<f64>> = e
            .relative
            .iter()
            .map(|xi| DMatrix::from_fn(p, p, |i, j| sigma2 * root[i] * root[j] * xi[(i, j)]))
            .collect();

        // conditional residual variances
        let mut ss = vec![0.0; p];
        for i in 0..self.n {
            for j in 0..p {
                let mut fit = (0..k).map(|l| self.x[(i, l)] * fixed[(l, j)]).sum::<f64>();
                for (r, idx) in self.factor_index.iter().enumerate() {
                    fit += blups[r][(idx[i], j)];
                }
                let res = self.a[(i, j)] - fit;
                ss[j] += res * res;
            }
        }
        for vr in &v {
            for j in 0..p {
                ss[j] += e.ratios[j] * vr.column(j).norm_squared();
            }
        }
        let denom = (self.n as f64 - k as f64).max(1.0);
        Ok(Conditional {
            deviance,
            sigma2,
            ratios: e.ratios.clone(),
            fixed,
            fixed_se,
            covariances,
            blups,
            residual_variances: e.ratios.iter().map(|d| sigma2 * d).collect(),
            conditional_residual_variances: ss.iter().map(|s| s / denom).collect(),
            min_eigenvalues: e.min_eigenvalues.clone(),
        })
    }

    fn levels_of(&self, r: usize) -> usize {
        if let Some(big) = &self.large {
            if big.spec_index == r {
                return big.counts.len();
            }
        }
        self.dense
            .iter()
            .find(|d| d.spec_index == r)
            .map_or(0, |d| d.levels)
    }
}

struct Solved {
    chol: Cholesky<f64, nalgebra::Dyn>,
    sys: System,
}
