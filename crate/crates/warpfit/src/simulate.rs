//! Synthetic corpus files: `curves.csv`, `covariates.csv` and the ground
//! truth in `truth.json`.

use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;
use warpfit_core::simulate::{simulate, SyntheticCorpus, SyntheticSpec};

use crate::artifacts::write_json;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::{write_covariates, write_curves};

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Serialize)]
struct TrueCurveFile<'a> {
    id: &'a str,
    speaker: usize,
    sentence: usize,
    class: usize,
    scores: &'a [f64],
    h: &'a [f64],
    w: &'a [f64],
}

#[derive(Serialize)]
struct TruthFile<'a> {
    seed: u64,
    response_names: Vec<String>,
    fixed: Vec<Vec<f64>>,
    speaker_cov: Vec<Vec<f64>>,
    sentence_cov: Vec<Vec<f64>>,
    residual_cov: Vec<Vec<f64>>,
    noise_sd: f64,
    speaker_effects: Vec<Vec<f64>>,
    sentence_effects: Vec<Vec<f64>>,
    curves: Vec<TrueCurveFile<'a>>,
}

/// The standard synthetic spec with the `sim_*` settings applied.
pub fn spec_from_config(cfg: &PipelineConfig) -> SyntheticSpec {
    let mut spec = SyntheticSpec::standard(cfg.sim_amp_modes, cfg.sim_phase_modes).with_classes(cfg.sim_classes);
    spec.speakers = cfg.sim_speakers;
    spec.sentences = cfg.sim_sentences;
    spec.curves = cfg.sim_curves;
    spec.grid_size = cfg.grid_size;
    spec.raw_points = cfg.sim_raw_points;
    spec.noise_sd = cfg.sim_noise_sd;
    spec
}

/// Draws a corpus and writes it to `dir`.
pub fn write_corpus(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<SyntheticCorpus> {
    let corpus = simulate(spec, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_curves(&dir.join("curves.csv"), &corpus.curves)?;
    write_covariates(&dir.join("covariates.csv"), &corpus.curves)?;
    let mut response_names: Vec<String> = (1..=spec.amplitude_modes).map(|j| format!("A{j}")).collect();
    response_names.extend((1..=spec.phase_modes).map(|j| format!("S{j}")));
    response_names.push("T".into());
    let truth = TruthFile {
        seed,
        response_names,
        fixed: rows(&spec.fixed),
        speaker_cov: rows(&spec.speaker_cov),
        sentence_cov: rows(&spec.sentence_cov),
        residual_cov: rows(&spec.residual_cov),
        noise_sd: spec.noise_sd,
        speaker_effects: rows(&corpus.speaker_effects),
        sentence_effects: rows(&corpus.sentence_effects),
        curves: corpus
            .truth
            .iter()
            .map(|t| TrueCurveFile {
                id: &t.id,
                speaker: t.speaker,
                sentence: t.sentence,
                class: t.class,
                scores: &t.scores,
                h: t.h.values(),
                w: &t.w,
            })
            .collect(),
    };
    write_json(&dir.join("truth.json"), &truth)?;
    Ok(corpus)
}
