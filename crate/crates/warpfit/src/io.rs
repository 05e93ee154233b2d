//! Corpus files and the CSV helpers shared by the pipeline stages.
//!
//! Floats are written with `Display`, which round-trips exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use sha2::{Digest, Sha256};
use warpfit_core::prep::RawCurve;

use crate::error::{Error, Result};

/// Columns every covariate file must have after `id`.
pub const REQUIRED_COVARIATES: [&str; 2] = ["speaker", "sentence"];

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    /// Sorted by id.
    pub curves: Vec<RawCurve>,
    /// Covariate rows that match no curve.
    pub unmatched: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

pub fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn name(path: &Path) -> String {
    path.display().to_string()
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(name(path), line, e.to_string())
}

fn header(path: &Path, rdr: &mut csv::Reader<File>) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(|e| csv_error(path, e))?;
    if h.is_empty() || (h.len() == 1 && h[0].is_empty()) {
        return Err(Error::parse(name(path), 1, "empty file (missing header)"));
    }
    Ok(h.iter().map(String::from).collect())
}

pub fn parse_f64(path: &Path, line: usize, field: &str, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::parse(name(path), line, format!("{what}: '{field}' is not a number")))
}

/// Readings grouped by id in file order.
pub fn read_readings(path: &Path) -> Result<BTreeMap<String, (Vec<f64>, Vec<Option<f64>>)>> {
    let mut rdr = reader(path)?;
    let h = header(path, &mut rdr)?;
    if h != ["id", "t", "f0"] {
        return Err(Error::parse(name(path), 1, format!("expected header id,t,f0, found {}", h.join(","))));
    }
    let mut out: BTreeMap<String, (Vec<f64>, Vec<Option<f64>>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec);
        let id = &rec[0];
        if id.is_empty() {
            return Err(Error::parse(name(path), line, "empty id"));
        }
        let t = parse_f64(path, line, &rec[1], "time")?;
        if !t.is_finite() {
            return Err(Error::parse(name(path), line, "time is not finite"));
        }
        let f0 = match &rec[2] {
            "" | "NA" | "NaN" => None,
            s => Some(parse_f64(path, line, s, "f0")?),
        };
        let entry = out.entry(id.to_string()).or_default();
        if let Some(&last) = entry.0.last() {
            if t <= last {
                return Err(Error::parse(
                    name(path),
                    line,
                    format!("curve {id}: time {t} does not increase (previous {last})"),
                ));
            }
        }
        entry.0.push(t);
        entry.1.push(f0);
    }
    Ok(out)
}

/// Covariate maps by id. Every column is carried; `required` columns must
/// exist and be non-empty.
pub fn read_covariates(path: &Path, required: &[String]) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut rdr = reader(path)?;
    let h = header(path, &mut rdr)?;
    if h.first().map(String::as_str) != Some("id") {
        return Err(Error::parse(name(path), 1, "first column must be id"));
    }
    for col in required {
        if !h.contains(col) {
            return Err(Error::parse(name(path), 1, format!("missing column {col}")));
        }
    }
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec);
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::parse(name(path), line, "empty id"));
        }
        let mut map = BTreeMap::new();
        for (col, value) in h.iter().zip(rec.iter()).skip(1) {
            if value.is_empty() && required.contains(col) {
                return Err(Error::parse(name(path), line, format!("{id}: empty {col}")));
            }
            map.insert(col.clone(), value.to_string());
        }
        if out.insert(id.clone(), map).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(out)
}

/// Joins the curve and covariate files. Every curve needs a covariate row.
pub fn load_corpus(curve_file: &Path, covariate_file: &Path, extra_columns: &[String]) -> Result<Corpus> {
    let readings = read_readings(curve_file)?;
    let mut required: Vec<String> = REQUIRED_COVARIATES.iter().map(|s| s.to_string()).collect();
    required.extend(extra_columns.iter().cloned());
    let mut covariates = read_covariates(covariate_file, &required)?;
    let mut curves = Vec::with_capacity(readings.len());
    for (id, (times, values)) in readings {
        let cov = covariates.remove(&id).ok_or_else(|| Error::MissingCovariate(id.clone()))?;
        curves.push(RawCurve::new(id, times, values, cov)?);
    }
    Ok(Corpus {
        curves,
        unmatched: covariates.into_keys().collect(),
    })
}

pub fn write_curves(path: &Path, curves: &[RawCurve]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["id", "t", "f0"])?;
    for c in curves {
        for (t, v) in c.times.iter().zip(&c.values) {
            let f0 = v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([c.id.as_str(), &t.to_string(), &f0])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Covariate file with `id`, the required columns, then the remaining keys
/// in sorted order.
pub fn write_covariates(path: &Path, curves: &[RawCurve]) -> Result<()> {
    let mut rest: BTreeSet<&str> = BTreeSet::new();
    for c in curves {
        rest.extend(c.covariates.keys().map(String::as_str));
    }
    let mut columns: Vec<&str> = REQUIRED_COVARIATES.to_vec();
    columns.extend(rest.into_iter().filter(|k| !REQUIRED_COVARIATES.contains(k)));
    let mut w = writer(path)?;
    let mut head = vec!["id"];
    head.extend(&columns);
    w.write_record(&head)?;
    for c in curves {
        let mut row = vec![c.id.as_str()];
        row.extend(columns.iter().map(|k| c.covariates.get(*k).map_or("", String::as_str)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Headerless CSV of float vectors, one per row.
pub fn read_vectors(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec);
        out.push(
            rec.iter()
                .map(|f| parse_f64(path, line, f, "value"))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(out)
}

pub fn write_vectors(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).flexible(true).from_writer(file);
    for r in rows {
        w.write_record(r.iter().map(f64::to_string))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
