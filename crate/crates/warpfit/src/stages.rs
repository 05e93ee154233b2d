//! Stage bodies. Every stage reads its inputs from upstream stage files, so
//! any stage can run against a cached upstream.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use warpfit_core::fpca::{fit_process, reconstruct, select_components, variance_table, DeviationMetric, Process};
use warpfit_core::mvlme::{build_design, fit, joint_response, DesignInput, FitOptions, ModelSpec};
use warpfit_core::prep::{screen_missing, smooth_with_mode, SampledCurve};
use warpfit_core::register::{register_auc, ClassPlan, RegistrationOptions, RegistrationResult};
use warpfit_core::simplex::clr_forward;
use warpfit_core::WarpingFunction;

use crate::artifacts::{
    read_numeric_table, read_predictions, read_registration, read_smoothed, write_json, write_numeric_table,
    write_smoothed, BasisFile, ClassSummary, ModelFile,
};
use crate::config::{Components, Method, PipelineConfig};
use crate::error::{Error, Result};
use crate::io::{load_corpus, write_covariates, writer};

/// Covariate columns holding the random-effect grouping factors, and the
/// names the factors carry in reports.
pub const RANDOM_FACTORS: [(&str, &str); 2] = [("speaker", "Speaker"), ("sentence", "Sentence")];

type Notes = Vec<String>;

pub fn input_files(cfg: &PipelineConfig) -> Result<(PathBuf, PathBuf)> {
    match (&cfg.curve_file, &cfg.covariate_file) {
        (Some(a), Some(b)) => Ok((a.clone(), b.clone())),
        _ => Err(Error::Config("curve_file and covariate_file must be set".into())),
    }
}

pub fn execute(stage: &str, cfg: &PipelineConfig, out: &Path, ids: Option<&[String]>) -> Result<Notes> {
    match stage {
        "smooth" => smooth(cfg, out),
        "register" => register(cfg, out),
        "transform" => transform(out),
        "decompose" => decompose(cfg, out),
        "fit" => fit_stage(cfg, out),
        "reconstruct" => reconstruct_stage(cfg, out, ids),
        _ => Err(Error::Config(format!("unknown stage {stage}"))),
    }
}

fn flush<W: std::io::Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn smooth(cfg: &PipelineConfig, out: &Path) -> Result<Notes> {
    let (curve_file, covariate_file) = input_files(cfg)?;
    let mut required = cfg.covariate_columns.clone();
    if !required.contains(&cfg.class_column) {
        required.push(cfg.class_column.clone());
    }
    let corpus = load_corpus(&curve_file, &covariate_file, &required)?;
    let mut notes = Vec::new();
    if !corpus.unmatched.is_empty() {
        notes.push(format!(
            "{} covariate rows match no curve: {}",
            corpus.unmatched.len(),
            corpus.unmatched.join(", ")
        ));
    }
    let results: Vec<std::result::Result<SampledCurve, String>> = corpus
        .curves
        .par_iter()
        .map(|raw| {
            if !screen_missing(raw, cfg.max_missing_fraction) {
                return Err(format!("missing fraction {:.3}", raw.missing_fraction()));
            }
            smooth_with_mode(raw, cfg.bandwidth_mode, cfg.grid_size).map_err(|e| e.to_string())
        })
        .collect();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (raw, r) in corpus.curves.iter().zip(results) {
        match r {
            Ok(c) => kept.push(c),
            Err(reason) => excluded.push((raw.id.clone(), reason)),
        }
    }
    if kept.is_empty() {
        return Err(Error::Config("every curve was excluded during smoothing".into()));
    }
    if !excluded.is_empty() {
        notes.push(format!("{} curves excluded", excluded.len()));
    }
    let dir = out.join("smooth");
    write_smoothed(&dir.join("curves.csv"), &kept)?;
    let raw_kept: Vec<_> = corpus
        .curves
        .iter()
        .filter(|c| kept.iter().any(|k| k.id == c.id))
        .cloned()
        .collect();
    write_covariates(&dir.join("covariates.csv"), &raw_kept)?;
    let path = dir.join("excluded.csv");
    let mut w = writer(&path)?;
    w.write_record(["id", "reason"])?;
    for (id, reason) in &excluded {
        w.write_record([id, reason])?;
    }
    flush(w, &path)?;
    Ok(notes)
}

fn load_smoothed(out: &Path) -> Result<Vec<SampledCurve>> {
    let dir = out.join("smooth");
    read_smoothed(&dir.join("curves.csv"), &dir.join("covariates.csv"))
}

fn file_stem(class: &str, used: &mut BTreeMap<String, usize>) -> String {
    let clean: String = class
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    let n = used.entry(clean.clone()).or_insert(0);
    *n += 1;
    if *n == 1 {
        format!("class_{clean}.csv")
    } else {
        format!("class_{clean}_{n}.csv")
    }
}

fn register(cfg: &PipelineConfig, out: &Path) -> Result<Notes> {
    let curves = load_smoothed(out)?;
    let mut classes: BTreeMap<String, Vec<SampledCurve>> = BTreeMap::new();
    for c in curves {
        let class = c
            .covariates
            .get(&cfg.class_column)
            .filter(|v| !v.is_empty())
            .cloned()
            .ok_or_else(|| {
                Error::Core(warpfit_core::Error::MissingLevel {
                    covariate: cfg.class_column.clone(),
                    id: c.id.clone(),
                })
            })?;
        classes.entry(class).or_default().push(c);
    }
    let opts = RegistrationOptions {
        lambda: cfg.lambda,
        nstar: cfg.nstar,
        seed: cfg.seed,
        ..RegistrationOptions::default()
    };
    let dir = out.join("register");
    let mut used = BTreeMap::new();
    let mut summary = Vec::new();
    let mut notes = Vec::new();
    for (class, members) in &classes {
        let (results, lambda, nstar) = match cfg.registration {
            Method::Pairwise => {
                let plan = ClassPlan::new(class, members, &opts)?;
                let results = (0..plan.len())
                    .into_par_iter()
                    .map(|i| plan.register(i))
                    .collect::<warpfit_core::Result<Vec<RegistrationResult>>>()?;
                let nstar = results.first().map_or(0, |r| r.nstar);
                (results, plan.lambda(), nstar)
            }
            Method::Auc => (register_auc(class, members)?, 0.0, 1),
        };
        let file = file_stem(class, &mut used);
        let path = dir.join(&file);
        let mut w = writer(&path)?;
        w.write_record(["id", "j", "h", "h_inv", "w"])?;
        for r in &results {
            for j in 0..r.w.len() {
                w.write_record([
                    r.id.clone(),
                    j.to_string(),
                    r.h.values()[j].to_string(),
                    r.h_inverse.values()[j].to_string(),
                    r.w[j].to_string(),
                ])?;
            }
        }
        flush(w, &path)?;
        let degenerate = results.iter().filter(|r| r.degenerate).count();
        if degenerate > 0 {
            notes.push(format!("class {class}: {degenerate} flat curves given identity warps"));
        }
        summary.push(ClassSummary {
            class: class.clone(),
            file,
            curves: results.len(),
            lambda,
            nstar,
            degenerate,
        });
    }
    let path = dir.join("summary.csv");
    let mut w = writer(&path)?;
    for s in &summary {
        w.serialize(s)?;
    }
    flush(w, &path)?;
    Ok(notes)
}

fn transform(out: &Path) -> Result<Notes> {
    let registered = read_registration(&out.join("register"))?;
    let mut rows = Vec::with_capacity(registered.len());
    let mut cells = 0;
    for (id, r) in &registered {
        let s = clr_forward(&WarpingFunction::new(r.h.clone())?)?;
        cells = s.len();
        rows.push((id.clone(), s.into_vec()));
    }
    let columns: Vec<String> = (1..=cells).map(|j| format!("s{j}")).collect();
    write_numeric_table(&out.join("transform").join("clr.csv"), &columns, &rows)?;
    Ok(Vec::new())
}

fn components(choice: Components, auto: usize, available: usize) -> usize {
    match choice {
        Components::Auto => auto,
        Components::Fixed(n) => n.min(available),
    }
}

fn decompose_one(
    process: Process,
    ids: &[String],
    samples: &[Vec<f64>],
    choice: Components,
    threshold: f64,
    metric: DeviationMetric,
    dir: &Path,
) -> Result<usize> {
    let basis = fit_process(process, samples)?;
    let count = components(choice, select_components(&basis, process, threshold, metric), basis.len());
    let (label, prefix) = match process {
        Process::Amplitude => ("amplitude", "A"),
        Process::Phase => ("phase", "S"),
    };
    let rows = ids
        .iter()
        .zip(samples)
        .map(|(id, x)| Ok((id.clone(), basis.project(x, count)?)))
        .collect::<Result<Vec<_>>>()?;
    let columns: Vec<String> = (1..=count).map(|j| format!("{prefix}{j}")).collect();
    write_numeric_table(&dir.join(format!("{label}_scores.csv")), &columns, &rows)?;
    let file = BasisFile {
        process: label.into(),
        deviations: basis.deviations(metric),
        variance_percent: variance_table(&basis.eigenvalues).iter().map(|v| v.percent).collect(),
        metric: format!("{metric:?}").to_lowercase(),
        threshold,
        selected: count,
        grid: basis.grid,
        weights: basis.weights,
        mean: basis.mean,
        eigenfunctions: basis.eigenfunctions,
        eigenvalues: basis.eigenvalues,
    };
    write_json(&dir.join(format!("{label}_basis.json")), &file)?;
    Ok(count)
}

fn decompose(cfg: &PipelineConfig, out: &Path) -> Result<Notes> {
    let registered = read_registration(&out.join("register"))?;
    let clr = read_numeric_table(&out.join("transform").join("clr.csv"))?;
    let ids: Vec<String> = registered.keys().cloned().collect();
    let amplitude: Vec<Vec<f64>> = registered.values().map(|r| r.w.clone()).collect();
    let phase_by_id: BTreeMap<String, Vec<f64>> = clr.rows.into_iter().collect();
    let phase = ids
        .iter()
        .map(|id| phase_by_id.get(id).cloned().ok_or_else(|| Error::UnknownId(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    let dir = out.join("decompose");
    let ma = decompose_one(Process::Amplitude, &ids, &amplitude, cfg.amp_components, cfg.jnd_amp, cfg.metric, &dir)?;
    let ms = decompose_one(Process::Phase, &ids, &phase, cfg.phase_components, cfg.jnd_phase, cfg.metric, &dir)?;
    Ok(vec![format!("{ma} amplitude and {ms} phase components")])
}

fn fit_stage(cfg: &PipelineConfig, out: &Path) -> Result<Notes> {
    let curves = load_smoothed(out)?;
    let dec = out.join("decompose");
    let amp: BTreeMap<String, Vec<f64>> = read_numeric_table(&dec.join("amplitude_scores.csv"))?.rows.into_iter().collect();
    let pha: BTreeMap<String, Vec<f64>> = read_numeric_table(&dec.join("phase_scores.csv"))?.rows.into_iter().collect();
    let mut ids = Vec::new();
    let mut covariates = Vec::new();
    let mut a_scores = Vec::new();
    let mut s_scores = Vec::new();
    let mut durations = Vec::new();
    for c in &curves {
        let (Some(a), Some(s)) = (amp.get(&c.id), pha.get(&c.id)) else {
            return Err(Error::UnknownId(c.id.clone()));
        };
        ids.push(c.id.clone());
        covariates.push(c.covariates.clone());
        a_scores.push(a.clone());
        s_scores.push(s.clone());
        durations.push(c.duration);
    }
    let (a, response_names, mask) = joint_response(&a_scores, &s_scores, &durations)?;
    let random: Vec<String> = RANDOM_FACTORS.iter().map(|(c, _)| c.to_string()).collect();
    let mut design = build_design(&DesignInput {
        ids: &ids,
        covariates: &covariates,
        numeric: &cfg.numeric_covariates,
        formula: &cfg.formula,
        random: &random,
        drop_aliased: true,
    })?;
    for (f, (_, display)) in design.factors.iter_mut().zip(RANDOM_FACTORS) {
        f.name = display.to_string();
    }
    let masks = vec![mask; design.factors.len()];
    let spec = ModelSpec::new(design.x, design.names, design.factors, masks, response_names)?;
    let opts = FitOptions {
        scalar_residual: cfg.scalar_residual,
        criterion: cfg.criterion,
        max_evals: cfg.max_evals,
        tol: cfg.tol,
        restarts: cfg.restarts,
        seed: cfg.seed,
    };
    let model = fit(&spec, &a, &opts)?;
    let mut notes = design.warnings.clone();
    if !model.convergence.converged {
        notes.push("optimizer did not converge; best point returned".into());
    }
    let file = ModelFile::from_model(&model, &cfg.formula, design.warnings);
    let dir = out.join("fit");
    write_json(&dir.join("model.json"), &file)?;

    let p = file.response_names.len();
    let path = dir.join("fixed_effects.csv");
    let mut w = writer(&path)?;
    w.write_record(["term", "component", "estimate", "se"])?;
    for (l, term) in file.fixed_names.iter().enumerate() {
        for (j, comp) in file.response_names.iter().enumerate() {
            w.write_record([
                term.clone(),
                comp.clone(),
                file.fixed[l][j].to_string(),
                file.fixed_se[l][j].to_string(),
            ])?;
        }
    }
    flush(w, &path)?;

    let path = dir.join("random_sds.csv");
    let mut w = writer(&path)?;
    let mut head = vec!["effect".to_string()];
    head.extend(file.response_names.iter().cloned());
    w.write_record(&head)?;
    for r in &file.random {
        let mut row = vec![r.name.clone()];
        row.extend(r.sds.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    let mut row = vec!["Residual".to_string()];
    row.extend(file.residual_sds.iter().map(f64::to_string));
    w.write_record(&row)?;
    flush(w, &path)?;

    for r in &file.random {
        let path = dir.join(format!("correlation_{}.csv", r.name));
        let mut w = writer(&path)?;
        w.write_record(&head.iter().enumerate().map(|(i, h)| if i == 0 { "component".into() } else { h.clone() }).collect::<Vec<_>>())?;
        for (i, comp) in file.response_names.iter().enumerate() {
            let mut row = vec![comp.clone()];
            row.extend(r.correlation[i].iter().map(|v| v.map_or("NA".into(), |x| x.to_string())));
            w.write_record(&row)?;
        }
        flush(w, &path)?;
    }

    let path = dir.join("predictions.csv");
    let mut w = writer(&path)?;
    let mut head = vec!["id".to_string(), "part".to_string()];
    head.extend(file.response_names.iter().cloned());
    w.write_record(&head)?;
    for (i, id) in ids.iter().enumerate() {
        let x_row: Vec<f64> = spec.x.row(i).iter().copied().collect();
        let none = vec![None; model.random.len()];
        let mut parts = vec![("fixed".to_string(), model.predict(&x_row, &none))];
        for (r, (factor, fit)) in spec.factors.iter().zip(&model.random).enumerate() {
            let g = factor.index[i];
            parts.push((fit.name.clone(), (0..p).map(|j| model.random[r].blups[(g, j)]).collect()));
        }
        for (part, values) in parts {
            let mut row = vec![id.clone(), part];
            row.extend(values.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
    }
    flush(w, &path)?;
    Ok(notes)
}

fn reconstruct_stage(cfg: &PipelineConfig, out: &Path, ids: Option<&[String]>) -> Result<Notes> {
    let curves: BTreeMap<String, SampledCurve> = load_smoothed(out)?.into_iter().map(|c| (c.id.clone(), c)).collect();
    let dec = out.join("decompose");
    let amp = BasisFile::load(&dec.join("amplitude_basis.json"))?;
    let pha = BasisFile::load(&dec.join("phase_basis.json"))?;
    let (columns, predictions) = read_predictions(&out.join("fit").join("predictions.csv"))?;
    let (ma, ms) = (amp.selected, pha.selected);
    if columns.len() != ma + ms + 1 {
        return Err(Error::Config(format!(
            "predictions have {} components, bases select {ma} + {ms} + 1",
            columns.len()
        )));
    }
    let selected: Vec<String> = match ids {
        Some(list) => {
            for id in list {
                if !predictions.contains_key(id) {
                    return Err(Error::UnknownId(id.clone()));
                }
            }
            list.to_vec()
        }
        None => predictions.keys().cloned().collect(),
    };
    let mut parts = vec!["fixed"];
    if cfg.reconstruct_speaker {
        parts.push(RANDOM_FACTORS[0].1);
    }
    if cfg.reconstruct_sentence {
        parts.push(RANDOM_FACTORS[1].1);
    }
    let (amp_basis, pha_basis) = (amp.basis(), pha.basis());
    let path = out.join("reconstruct").join("reconstruct.csv");
    let mut w = writer(&path)?;
    w.write_record(["id", "t", "observed", "estimated"])?;
    for id in &selected {
        let curve = curves.get(id).ok_or_else(|| Error::UnknownId(id.clone()))?;
        let pred = &predictions[id];
        let mut scores = vec![0.0; columns.len()];
        for part in &parts {
            if let Some(v) = pred.get(*part) {
                for (s, x) in scores.iter_mut().zip(v) {
                    *s += x;
                }
            }
        }
        let rec = reconstruct(&amp_basis, &scores[..ma], &pha_basis, &scores[ma..ma + ms], curve.duration)?;
        for (j, (t, est)) in rec.times.iter().zip(&rec.y).enumerate() {
            // durations are in tens of milliseconds; report seconds
            w.write_record([
                id.clone(),
                (t / 100.0).to_string(),
                curve.values[j].to_string(),
                est.to_string(),
            ])?;
        }
    }
    flush(w, &path)?;
    Ok(Vec::new())
}
