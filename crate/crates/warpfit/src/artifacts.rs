//! On-disk forms of stage outputs and the readers used by downstream stages.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use warpfit_core::fpca::EigenBasis;
use warpfit_core::mvlme::{correlation_report, FittedModel};
use warpfit_core::prep::SampledCurve;

use crate::error::{Error, Result};
use crate::io::{parse_f64, reader, writer};

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Header plus `(id, values)` rows of a CSV whose first column is an id and
/// whose other columns are numbers.
pub struct NumericTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

pub fn write_numeric_table(path: &Path, columns: &[String], rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = writer(path)?;
    let mut head = vec!["id".to_string()];
    head.extend(columns.iter().cloned());
    w.write_record(&head)?;
    for (id, values) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(values.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_numeric_table(path: &Path) -> Result<NumericTable> {
    let mut rdr = reader(path)?;
    let head = rdr.headers()?.clone();
    let columns: Vec<String> = head.iter().skip(1).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let values = rec
            .iter()
            .skip(1)
            .map(|f| parse_f64(path, line, f, "value"))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((rec[0].to_string(), values));
    }
    Ok(NumericTable { columns, rows })
}

/// Smoothed curves: `id, duration, y0..ym`.
pub fn write_smoothed(path: &Path, curves: &[SampledCurve]) -> Result<()> {
    let points = curves.first().map_or(0, |c| c.values.len());
    let mut columns = vec!["duration".to_string()];
    columns.extend((0..points).map(|j| format!("y{j}")));
    let rows: Vec<(String, Vec<f64>)> = curves
        .iter()
        .map(|c| {
            let mut v = vec![c.duration];
            v.extend(&c.values);
            (c.id.clone(), v)
        })
        .collect();
    write_numeric_table(path, &columns, &rows)
}

/// Smoothed curves joined with their covariates.
pub fn read_smoothed(curves: &Path, covariates: &Path) -> Result<Vec<SampledCurve>> {
    let table = read_numeric_table(curves)?;
    let cov = crate::io::read_covariates(covariates, &[])?;
    table
        .rows
        .into_iter()
        .map(|(id, v)| {
            let c = cov.get(&id).cloned().ok_or_else(|| Error::MissingCovariate(id.clone()))?;
            Ok(SampledCurve::new(id, v[1..].to_vec(), v[0])?.with_covariates(c))
        })
        .collect()
}

/// Warps and registered curve of one curve, read back from a class file.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredCurve {
    pub class: String,
    pub h: Vec<f64>,
    pub h_inverse: Vec<f64>,
    pub w: Vec<f64>,
}

/// One row per class in `register/summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    pub file: String,
    pub curves: usize,
    pub lambda: f64,
    pub nstar: usize,
    pub degenerate: usize,
}

pub fn read_registration(dir: &Path) -> Result<BTreeMap<String, RegisteredCurve>> {
    let summary = dir.join("summary.csv");
    let mut rdr = reader(&summary)?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize() {
        let s: ClassSummary = row?;
        let path = dir.join(&s.file);
        let mut r = reader(&path)?;
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let entry = out.entry(rec[0].to_string()).or_insert_with(|| RegisteredCurve {
                class: s.class.clone(),
                h: Vec::new(),
                h_inverse: Vec::new(),
                w: Vec::new(),
            });
            entry.h.push(parse_f64(&path, line, &rec[2], "h")?);
            entry.h_inverse.push(parse_f64(&path, line, &rec[3], "h_inv")?);
            entry.w.push(parse_f64(&path, line, &rec[4], "w")?);
        }
    }
    Ok(out)
}

/// An eigenbasis with its selection summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisFile {
    pub process: String,
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub metric: String,
    pub threshold: f64,
    pub deviations: Vec<f64>,
    pub variance_percent: Vec<f64>,
    pub selected: usize,
}

impl BasisFile {
    pub fn basis(&self) -> EigenBasis {
        EigenBasis {
            grid: self.grid.clone(),
            weights: self.weights.clone(),
            mean: self.mean.clone(),
            eigenfunctions: self.eigenfunctions.clone(),
            eigenvalues: self.eigenvalues.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffectFile {
    pub name: String,
    pub levels: Vec<String>,
    pub sds: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// `null` where a component has zero variance.
    pub correlation: Vec<Vec<Option<f64>>>,
    pub blups: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceFile {
    pub converged: bool,
    pub evaluations: usize,
    pub iterations: usize,
    pub clamped: bool,
    pub min_eigenvalue: f64,
}

/// Fitted model as persisted in `fit/model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub formula: String,
    pub criterion: String,
    pub scalar_residual: bool,
    pub n_obs: usize,
    pub response_names: Vec<String>,
    pub fixed_names: Vec<String>,
    /// `k x p`, rows follow `fixed_names`.
    pub fixed: Vec<Vec<f64>>,
    pub fixed_se: Vec<Vec<f64>>,
    pub random: Vec<RandomEffectFile>,
    pub residual_variances: Vec<f64>,
    pub residual_sds: Vec<f64>,
    pub sigma2: f64,
    pub deviance: f64,
    pub theta: Vec<f64>,
    pub convergence: ConvergenceFile,
    pub warnings: Vec<String>,
}

impl ModelFile {
    pub fn from_model(model: &FittedModel, formula: &str, warnings: Vec<String>) -> Self {
        let correlations = correlation_report(model);
        Self {
            formula: formula.to_string(),
            criterion: format!("{:?}", model.criterion).to_lowercase(),
            scalar_residual: model.scalar_residual,
            n_obs: model.n_obs,
            response_names: model.response_names.clone(),
            fixed_names: model.fixed_names.clone(),
            fixed: rows(&model.fixed),
            fixed_se: rows(&model.fixed_se),
            random: model
                .random
                .iter()
                .zip(correlations)
                .map(|(r, c)| RandomEffectFile {
                    name: r.name.clone(),
                    levels: r.levels.clone(),
                    sds: r.sds(),
                    covariance: rows(&r.covariance),
                    correlation: c.values,
                    blups: rows(&r.blups),
                })
                .collect(),
            residual_variances: model.residual_variances.clone(),
            residual_sds: model.residual_sds.clone(),
            sigma2: model.sigma2,
            deviance: model.deviance,
            theta: model.theta.clone(),
            convergence: ConvergenceFile {
                converged: model.convergence.converged,
                evaluations: model.convergence.evaluations,
                iterations: model.convergence.iterations,
                clamped: model.convergence.clamped,
                min_eigenvalue: model.convergence.min_eigenvalue,
            },
            warnings,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-curve prediction parts: `id, part, <components>` with part one of
/// `fixed` or a random-effect name.
pub fn read_predictions(path: &Path) -> Result<(Vec<String>, BTreeMap<String, BTreeMap<String, Vec<f64>>>)> {
    let mut rdr = reader(path)?;
    let columns: Vec<String> = rdr.headers()?.iter().skip(2).map(String::from).collect();
    let mut out: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let values = rec
            .iter()
            .skip(2)
            .map(|f| parse_f64(path, line, f, "prediction"))
            .collect::<Result<Vec<f64>>>()?;
        out.entry(rec[0].to_string()).or_default().insert(rec[1].to_string(), values);
    }
    Ok((columns, out))
}
