//! Synthetic corpora drawn from the joint generative model, with the ground
//! truth kept alongside for recovery tests.
//!
//! Scores for curve `i` are `x_i B + gamma_speaker + gamma_sentence + e_i`,
//! ordered as amplitude modes, phase modes, duration. The amplitude curve is
//! `w(u) = mu(u) + sum a_k phi_k(u)` with shifted Legendre modes, the phase
//! log-derivative is `s(u) = sum b_k sqrt(2) cos(k pi u)` on cell midpoints,
//! `h = clr_inverse(s)` and the observed curve is `y(t) = w(h^-1(t / T))`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::prep::RawCurve;
use crate::quad::{cell_midpoints, interp, uniform_grid};
use crate::register::{invert_warp, WarpingFunction};
use crate::rng::{substream, Rng};
use crate::simplex::clr_inverse;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub speakers: usize,
    pub sentences: usize,
    pub classes: usize,
    pub curves: usize,
    /// Points of the common grid on which warps are represented.
    pub grid_size: usize,
    /// Readings per raw curve.
    pub raw_points: usize,
    pub amplitude_modes: usize,
    pub phase_modes: usize,
    /// Amplitude mean `level + slope (u - 1/2) + wave sin(2 pi u)`, in Hz.
    pub mean_level: f64,
    pub mean_slope: f64,
    /// Amplitude of a `sin(2 pi u)` rise-fall added to the mean; it gives
    /// the curves a feature whose timing registration can identify.
    pub mean_wave: f64,
    /// `classes x p`: intercept row, then offsets of classes 2.. against class 1.
    pub fixed: DMatrix<f64>,
    pub speaker_cov: DMatrix<f64>,
    pub sentence_cov: DMatrix<f64>,
    pub residual_cov: DMatrix<f64>,
    /// Observation noise sd in Hz.
    pub noise_sd: f64,
}

impl SyntheticSpec {
    /// A corpus with the given mode counts and a block-orthogonal covariance
    /// structure: no coupling within the amplitude block or within the phase
    /// block, couplings between blocks and with duration.
    pub fn standard(amplitude_modes: usize, phase_modes: usize) -> Self {
        let p = amplitude_modes + phase_modes + 1;
        let t = p - 1;
        let mut sd_speaker = Vec::with_capacity(p);
        let mut sd_sentence = Vec::with_capacity(p);
        let mut sd_residual = Vec::with_capacity(p);
        for k in 1..=amplitude_modes {
            let k = k as f64;
            sd_speaker.push(4.0 / k);
            sd_sentence.push(3.0 / k);
            sd_residual.push(5.0 / k);
        }
        for k in 1..=phase_modes {
            let k = k as f64;
            sd_speaker.push(0.10 / k);
            sd_sentence.push(0.08 / k);
            sd_residual.push(0.12 / k);
        }
        sd_speaker.push(2.0);
        sd_sentence.push(1.5);
        sd_residual.push(3.0);

        let mut corr_speaker = DMatrix::identity(p, p);
        let mut corr_sentence = DMatrix::identity(p, p);
        let couple = |m: &mut DMatrix<f64>, i: usize, j: usize, r: f64| {
            m[(i, j)] = r;
            m[(j, i)] = r;
        };
        if amplitude_modes > 0 {
            couple(&mut corr_speaker, 0, t, 0.3);
            couple(&mut corr_sentence, 0, t, 0.2);
        }
        if phase_modes > 0 {
            let s1 = amplitude_modes;
            couple(&mut corr_speaker, s1, t, -0.4);
            couple(&mut corr_sentence, s1, t, -0.5);
            if amplitude_modes > 0 {
                couple(&mut corr_speaker, 0, s1, 0.2);
            }
        }
        let scale = |sd: &[f64], corr: &DMatrix<f64>| DMatrix::from_fn(p, p, |i, j| sd[i] * sd[j] * corr[(i, j)]);

        let classes = 5;
        let fixed = class_effects(classes, amplitude_modes, phase_modes);
        Self {
            speakers: 5,
            sentences: 40,
            classes,
            curves: 400,
            grid_size: 16,
            raw_points: 40,
            amplitude_modes,
            phase_modes,
            mean_level: 200.0,
            mean_slope: -20.0,
            mean_wave: 40.0,
            fixed,
            speaker_cov: scale(&sd_speaker, &corr_speaker),
            sentence_cov: scale(&sd_sentence, &corr_sentence),
            residual_cov: DMatrix::from_diagonal(&DVector::from_iterator(p, sd_residual.iter().map(|s| s * s))),
            noise_sd: 1.0,
        }
    }

    /// Same spec with `classes` classes; class effects follow the standard
    /// pattern.
    pub fn with_classes(mut self, classes: usize) -> Self {
        self.classes = classes;
        self.fixed = class_effects(classes, self.amplitude_modes, self.phase_modes);
        self
    }

    pub fn p(&self) -> usize {
        self.amplitude_modes + self.phase_modes + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        let p = self.p();
        if self.speakers == 0 || self.sentences == 0 || self.classes == 0 || self.curves == 0 {
            return bad("speakers, sentences, classes and curves must be positive".into());
        }
        if self.grid_size < 4 || self.raw_points < 4 {
            return bad("grid_size and raw_points must be at least 4".into());
        }
        if self.phase_modes + 1 >= self.grid_size {
            return bad(format!(
                "{} phase modes need a grid of more than {} points",
                self.phase_modes,
                self.phase_modes + 1
            ));
        }
        if self.fixed.shape() != (self.classes, p) {
            return bad(format!("fixed effects must be {} x {p}", self.classes));
        }
        for (name, m) in [
            ("speaker", &self.speaker_cov),
            ("sentence", &self.sentence_cov),
            ("residual", &self.residual_cov),
        ] {
            if m.shape() != (p, p) {
                return bad(format!("{name} covariance must be {p} x {p}"));
            }
            if m.iter().any(|v| !v.is_finite()) || (m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
                return bad(format!("{name} covariance must be finite and symmetric"));
            }
            let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
            if min < -1e-10 * (1.0 + m.abs().max()) {
                return bad(format!("{name} covariance is not positive semidefinite"));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be non-negative".into());
        }
        if !(self.mean_level.is_finite() && self.mean_slope.is_finite() && self.mean_wave.is_finite()) {
            return bad("mean function must be finite".into());
        }
        Ok(())
    }

    /// Amplitude mean on `u`.
    pub fn mean(&self, u: f64) -> f64 {
        self.mean_level + self.mean_slope * (u - 0.5) + self.mean_wave * (2.0 * core::f64::consts::PI * u).sin()
    }

    /// Amplitude curve with the given mode scores, evaluated at `u`.
    pub fn amplitude(&self, scores: &[f64], u: f64) -> f64 {
        self.mean(u)
            + scores
                .iter()
                .enumerate()
                .map(|(k, a)| a * legendre_mode(k + 1, u))
                .sum::<f64>()
    }

    /// Log-derivative on the cell midpoints for the given phase scores.
    pub fn log_derivative(&self, scores: &[f64]) -> Vec<f64> {
        let mids = cell_midpoints(&uniform_grid(self.grid_size));
        mids.iter()
            .map(|&u| {
                scores
                    .iter()
                    .enumerate()
                    .map(|(k, b)| b * cosine_mode(k + 1, u))
                    .sum()
            })
            .collect()
    }
}

/// `sqrt(2k + 1) P_k(2u - 1)`, orthonormal on [0, 1].
// Intercept row (baseline duration 20), then offsets for classes 2.. on the
// first amplitude score, the first phase score and duration.
fn class_effects(classes: usize, amplitude_modes: usize, phase_modes: usize) -> DMatrix<f64> {
    let p = amplitude_modes + phase_modes + 1;
    let t = p - 1;
    let mut fixed = DMatrix::zeros(classes, p);
    if classes == 0 {
        return fixed;
    }
    fixed[(0, t)] = 20.0;
    for c in 1..classes {
        if amplitude_modes > 0 {
            fixed[(c, 0)] = 6.0 * c as f64 - 12.0;
        }
        if phase_modes > 0 {
            fixed[(c, amplitude_modes)] = 0.04 * c as f64 - 0.08;
        }
        fixed[(c, t)] = c as f64 - 2.0;
    }
    fixed
}

pub fn legendre_mode(k: usize, u: f64) -> f64 {
    let x = 2.0 * u - 1.0;
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return 1.0;
    }
    for n in 1..k {
        let n = n as f64;
        let next = ((2.0 * n + 1.0) * x * cur - n * prev) / (n + 1.0);
        prev = cur;
        cur = next;
    }
    (2.0 * k as f64 + 1.0).sqrt() * cur
}

/// `sqrt(2) cos(k pi u)`: orthonormal on [0, 1] with zero integral, and
/// zero-sum on any midpoint grid with more than `k` cells.
pub fn cosine_mode(k: usize, u: f64) -> f64 {
    core::f64::consts::SQRT_2 * (k as f64 * core::f64::consts::PI * u).cos()
}

/// Ground truth for one synthetic curve.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueCurve {
    pub id: String,
    pub speaker: usize,
    pub sentence: usize,
    pub class: usize,
    /// Amplitude scores, phase scores, duration.
    pub scores: Vec<f64>,
    pub h: WarpingFunction,
    /// Amplitude curve on the common grid.
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub curves: Vec<RawCurve>,
    pub truth: Vec<TrueCurve>,
    pub speaker_effects: DMatrix<f64>,
    pub sentence_effects: DMatrix<f64>,
}

pub fn speaker_label(s: usize) -> String {
    format!("spk{:02}", s + 1)
}

pub fn sentence_label(s: usize) -> String {
    format!("sen{:03}", s + 1)
}

pub fn class_label(c: usize) -> String {
    format!("c{}", c + 1)
}

pub fn curve_label(i: usize) -> String {
    format!("u{:05}", i + 1)
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Symmetric square root with negative eigenvalues set to zero, so
/// semidefinite (including all-zero) covariances can be sampled.
fn root(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov.clone());
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

fn draw(rng: &mut Rng, root: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(root.nrows(), |_, _| normal(rng));
    root * z
}

/// Draws a corpus. Speakers cycle fastest, sentences next, so every
/// speaker-sentence pair occurs when `curves >= speakers * sentences`;
/// classes are drawn uniformly.
pub fn simulate(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let p = spec.p();
    let na = spec.amplitude_modes;
    let ns = spec.phase_modes;

    let mut effects_rng = substream(seed, &["simulate", "effects"]);
    let rs = root(&spec.speaker_cov);
    let rt = root(&spec.sentence_cov);
    let re = root(&spec.residual_cov);
    let mut speaker_effects = DMatrix::zeros(spec.speakers, p);
    for l in 0..spec.speakers {
        speaker_effects.set_row(l, &draw(&mut effects_rng, &rs).transpose());
    }
    let mut sentence_effects = DMatrix::zeros(spec.sentences, p);
    for l in 0..spec.sentences {
        sentence_effects.set_row(l, &draw(&mut effects_rng, &rt).transpose());
    }

    let grid = uniform_grid(spec.grid_size);
    let raw_grid = uniform_grid(spec.raw_points);
    let mut design_rng = substream(seed, &["simulate", "design"]);
    let mut curves = Vec::with_capacity(spec.curves);
    let mut truth = Vec::with_capacity(spec.curves);
    for i in 0..spec.curves {
        let id = curve_label(i);
        let speaker = i % spec.speakers;
        let sentence = (i / spec.speakers) % spec.sentences;
        let class = design_rng.random_range(0..spec.classes);
        let mut rng = substream(seed, &["simulate", "curve", &id]);

        let mut mean = spec.fixed.row(0).transpose();
        if class > 0 {
            mean += spec.fixed.row(class).transpose();
        }
        let scores = mean
            + speaker_effects.row(speaker).transpose()
            + sentence_effects.row(sentence).transpose()
            + draw(&mut rng, &re);
        let scores: Vec<f64> = scores.iter().copied().collect();
        let duration = scores[p - 1];
        if !(duration > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "curve {id} drew a non-positive duration {duration}; raise the duration intercept"
            )));
        }

        let amp = &scores[..na];
        let h = clr_inverse(&spec.log_derivative(&scores[na..na + ns]));
        let h_inv = invert_warp(&h)?;
        let w: Vec<f64> = grid.iter().map(|&u| spec.amplitude(amp, u)).collect();

        let seconds = duration / 100.0;
        let times: Vec<f64> = raw_grid.iter().map(|x| x * seconds).collect();
        let values: Vec<Option<f64>> = raw_grid
            .iter()
            .map(|&x| {
                let u = interp(&grid, h_inv.values(), x);
                Some(spec.amplitude(amp, u) + spec.noise_sd * normal(&mut rng))
            })
            .collect();
        let mut covariates = BTreeMap::new();
        covariates.insert("speaker".into(), speaker_label(speaker));
        covariates.insert("sentence".into(), sentence_label(sentence));
        covariates.insert("class".into(), class_label(class));
        curves.push(RawCurve::new(id.clone(), times, values, covariates)?);
        truth.push(TrueCurve {
            id,
            speaker,
            sentence,
            class,
            scores,
            h,
            w,
        });
    }
    Ok(SyntheticCorpus {
        curves,
        truth,
        speaker_effects,
        sentence_effects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::{inner, trapezoid_weights};

    #[test]
    fn legendre_modes_are_orthonormal() {
        let grid = uniform_grid(4001);
        let w = trapezoid_weights(&grid);
        for k in 1..5 {
            for l in 1..5 {
                let a: Vec<f64> = grid.iter().map(|&u| legendre_mode(k, u)).collect();
                let b: Vec<f64> = grid.iter().map(|&u| legendre_mode(l, u)).collect();
                let expect = if k == l { 1.0 } else { 0.0 };
                assert!((inner(&w, &a, &b) - expect).abs() < 1e-5, "{k} {l}");
            }
        }
    }

    #[test]
    fn cosine_modes_are_zero_sum_on_midpoints() {
        let spec = SyntheticSpec::standard(2, 3);
        for k in 1..=3 {
            let mut scores = alloc::vec![0.0; 3];
            scores[k - 1] = 1.0;
            let s = spec.log_derivative(&scores);
            assert!(s.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn quiet_spec_gives_identical_curves() {
        let mut spec = SyntheticSpec::standard(2, 2);
        let p = spec.p();
        spec.speaker_cov = DMatrix::zeros(p, p);
        spec.sentence_cov = DMatrix::zeros(p, p);
        spec.residual_cov = DMatrix::zeros(p, p);
        spec.fixed = DMatrix::zeros(spec.classes, p);
        spec.fixed[(0, p - 1)] = 20.0;
        spec.noise_sd = 0.0;
        spec.curves = 10;
        let corpus = simulate(&spec, 1).unwrap();
        for c in &corpus.curves {
            for (t, v) in c.times.iter().zip(&c.values) {
                let u = t / 0.2;
                assert!((v.unwrap() - spec.mean(u)).abs() < 1e-9);
            }
        }
        assert!(corpus.truth.iter().all(|t| t.h.is_identity()));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SyntheticSpec::standard(2, 2);
        spec.phase_modes = 15;
        assert!(matches!(simulate(&spec, 0), Err(Error::InvalidSpec(_))));
        let mut spec = SyntheticSpec::standard(2, 2);
        spec.speaker_cov[(0, 0)] = -1.0;
        assert!(matches!(simulate(&spec, 0), Err(Error::InvalidSpec(_))));
        let mut spec = SyntheticSpec::standard(2, 2);
        spec.fixed[(0, 4)] = -100.0;
        assert!(matches!(simulate(&spec, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn simulation_is_deterministic_and_labelled() {
        let spec = SyntheticSpec::standard(2, 2);
        let a = simulate(&spec, 3).unwrap();
        let b = simulate(&spec, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.curves.len(), spec.curves);
        assert_eq!(a.curves[7].covariates["speaker"], "spk03");
        assert_eq!(a.curves[7].covariates["sentence"], "sen002");
        let c = simulate(&spec, 4).unwrap();
        assert_ne!(a.truth[0].scores, c.truth[0].scores);
    }
}
