//! Flat `key = value` configuration. Lines starting with `#` are comments.
//! Unknown keys and out-of-range values are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use warpfit_core::fpca::{DeviationMetric, AMPLITUDE_JND, PHASE_JND};
use warpfit_core::mvlme::Criterion;
use warpfit_core::prep::BandwidthMode;
use warpfit_core::register::Lambda;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Pairwise,
    Auc,
}

/// Component count: chosen by the perceptual threshold or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Components {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub curve_file: Option<PathBuf>,
    pub covariate_file: Option<PathBuf>,
    /// Extra covariate columns carried from the covariate file.
    pub covariate_columns: Vec<String>,
    pub numeric_covariates: Vec<String>,

    pub grid_size: usize,
    pub bandwidth: f64,
    pub bandwidth_mode: BandwidthMode,
    pub max_missing_fraction: f64,

    pub registration: Method,
    pub lambda: Lambda,
    pub nstar: usize,
    pub class_column: String,

    pub jnd_amp: f64,
    pub jnd_phase: f64,
    pub metric: DeviationMetric,
    pub amp_components: Components,
    pub phase_components: Components,

    pub formula: String,
    pub scalar_residual: bool,
    pub criterion: Criterion,
    pub max_evals: usize,
    pub tol: f64,
    pub restarts: usize,

    pub reconstruct_speaker: bool,
    pub reconstruct_sentence: bool,

    pub seed: u64,

    pub sim_speakers: usize,
    pub sim_sentences: usize,
    pub sim_classes: usize,
    pub sim_curves: usize,
    pub sim_amp_modes: usize,
    pub sim_phase_modes: usize,
    pub sim_noise_sd: f64,
    pub sim_raw_points: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            curve_file: None,
            covariate_file: None,
            covariate_columns: Vec::new(),
            numeric_covariates: Vec::new(),
            grid_size: 16,
            bandwidth: 0.05,
            bandwidth_mode: BandwidthMode::Fixed(0.05),
            max_missing_fraction: 0.05,
            registration: Method::Pairwise,
            lambda: Lambda::Auto,
            nstar: 30,
            class_column: "class".into(),
            jnd_amp: AMPLITUDE_JND,
            jnd_phase: PHASE_JND,
            metric: DeviationMetric::Peak,
            amp_components: Components::Auto,
            phase_components: Components::Auto,
            formula: "class".into(),
            scalar_residual: false,
            criterion: Criterion::Reml,
            max_evals: 500,
            tol: 1e-6,
            restarts: 1,
            reconstruct_speaker: true,
            reconstruct_sentence: true,
            seed: 0,
            sim_speakers: 5,
            sim_sentences: 40,
            sim_classes: 5,
            sim_curves: 400,
            sim_amp_modes: 4,
            sim_phase_modes: 4,
            sim_noise_sd: 1.0,
            sim_raw_points: 40,
        }
    }
}

fn bad(key: &str, value: &str, why: &str) -> Error {
    Error::Config(format!("{key} = {value}: {why}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, "not a number"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn unit_interval(key: &str, value: &str, v: f64, open_low: bool) -> Result<f64> {
    let ok = if open_low { v > 0.0 && v <= 1.0 } else { (0.0..=1.0).contains(&v) };
    if ok {
        Ok(v)
    } else {
        Err(bad(key, value, "must lie in (0, 1]"))
    }
}

fn positive(key: &str, value: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, value, "must be positive"))
    }
}

fn at_least(key: &str, value: &str, v: usize, min: usize) -> Result<usize> {
    if v >= min {
        Ok(v)
    } else {
        Err(bad(key, value, &format!("must be at least {min}")))
    }
}

fn components(key: &str, value: &str) -> Result<Components> {
    if value == "auto" {
        Ok(Components::Auto)
    } else {
        Ok(Components::Fixed(at_least(key, value, parse_num(key, value)?, 1)?))
    }
}

impl PipelineConfig {
    /// Reads a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.curve_file, &mut cfg.covariate_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        Ok(cfg)
    }

    /// Sets one key; shared by file parsing and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "curve_file" => self.curve_file = Some(value.into()),
            "covariate_file" => self.covariate_file = Some(value.into()),
            "covariate_columns" => self.covariate_columns = parse_list(value),
            "numeric_covariates" => self.numeric_covariates = parse_list(value),
            "grid_size" => self.grid_size = at_least(key, value, parse_num(key, value)?, 3)?,
            "bandwidth" => {
                self.bandwidth = unit_interval(key, value, parse_num(key, value)?, true)?;
                if let BandwidthMode::Fixed(_) = self.bandwidth_mode {
                    self.bandwidth_mode = BandwidthMode::Fixed(self.bandwidth);
                }
            }
            "bandwidth_mode" => {
                self.bandwidth_mode = match value {
                    "fixed" => BandwidthMode::Fixed(self.bandwidth),
                    "cv" => BandwidthMode::CrossValidated,
                    _ => return Err(bad(key, value, "expected fixed or cv")),
                }
            }
            "max_missing_fraction" => {
                self.max_missing_fraction = unit_interval(key, value, parse_num(key, value)?, true)?
            }
            "registration" => {
                self.registration = match value {
                    "pairwise" => Method::Pairwise,
                    "auc" => Method::Auc,
                    _ => return Err(bad(key, value, "expected pairwise or auc")),
                }
            }
            "lambda" => {
                self.lambda = if value == "auto" {
                    Lambda::Auto
                } else {
                    let v: f64 = parse_num(key, value)?;
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(bad(key, value, "must be auto or non-negative"));
                    }
                    Lambda::Fixed(v)
                }
            }
            "nstar" => self.nstar = at_least(key, value, parse_num(key, value)?, 1)?,
            "class_column" => {
                if value.is_empty() {
                    return Err(bad(key, value, "must not be empty"));
                }
                self.class_column = value.into()
            }
            "jnd_amp" => self.jnd_amp = positive(key, value, parse_num(key, value)?)?,
            "jnd_phase" => self.jnd_phase = positive(key, value, parse_num(key, value)?)?,
            "metric" => {
                self.metric = match value {
                    "peak" => DeviationMetric::Peak,
                    "rms" => DeviationMetric::Rms,
                    _ => return Err(bad(key, value, "expected peak or rms")),
                }
            }
            "amp_components" => self.amp_components = components(key, value)?,
            "phase_components" => self.phase_components = components(key, value)?,
            "formula" => {
                if value.is_empty() {
                    return Err(bad(key, value, "must not be empty"));
                }
                self.formula = value.into()
            }
            "scalar_residual" => self.scalar_residual = parse_bool(key, value)?,
            "criterion" => {
                self.criterion = match value {
                    "reml" => Criterion::Reml,
                    "ml" => Criterion::Ml,
                    _ => return Err(bad(key, value, "expected reml or ml")),
                }
            }
            "max_evals" => self.max_evals = at_least(key, value, parse_num(key, value)?, 1)?,
            "tol" => self.tol = positive(key, value, parse_num(key, value)?)?,
            "restarts" => self.restarts = parse_num(key, value)?,
            "reconstruct_speaker" => self.reconstruct_speaker = parse_bool(key, value)?,
            "reconstruct_sentence" => self.reconstruct_sentence = parse_bool(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "sim_speakers" => self.sim_speakers = at_least(key, value, parse_num(key, value)?, 2)?,
            "sim_sentences" => self.sim_sentences = at_least(key, value, parse_num(key, value)?, 2)?,
            "sim_classes" => self.sim_classes = at_least(key, value, parse_num(key, value)?, 1)?,
            "sim_curves" => self.sim_curves = at_least(key, value, parse_num(key, value)?, 2)?,
            "sim_amp_modes" => self.sim_amp_modes = at_least(key, value, parse_num(key, value)?, 1)?,
            "sim_phase_modes" => self.sim_phase_modes = at_least(key, value, parse_num(key, value)?, 1)?,
            "sim_noise_sd" => {
                let v: f64 = parse_num(key, value)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(bad(key, value, "must be non-negative"));
                }
                self.sim_noise_sd = v
            }
            "sim_raw_points" => self.sim_raw_points = at_least(key, value, parse_num(key, value)?, 8)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Canonical text of the settings a stage depends on. Stage cache keys
    /// hash this, so editing one section never invalidates another.
    pub fn section(&self, stage: &str) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        match stage {
            "smooth" => {
                put("grid_size", self.grid_size.to_string());
                put("bandwidth_mode", format!("{:?}", self.bandwidth_mode));
                put("max_missing_fraction", self.max_missing_fraction.to_string());
                put("covariate_columns", self.covariate_columns.join(","));
            }
            "register" => {
                put("registration", format!("{:?}", self.registration));
                put("lambda", format!("{:?}", self.lambda));
                put("nstar", self.nstar.to_string());
                put("class_column", self.class_column.clone());
                put("seed", self.seed.to_string());
            }
            "decompose" => {
                put("jnd_amp", self.jnd_amp.to_string());
                put("jnd_phase", self.jnd_phase.to_string());
                put("metric", format!("{:?}", self.metric));
                put("amp_components", format!("{:?}", self.amp_components));
                put("phase_components", format!("{:?}", self.phase_components));
            }
            "fit" => {
                put("formula", self.formula.clone());
                put("numeric_covariates", self.numeric_covariates.join(","));
                put("scalar_residual", self.scalar_residual.to_string());
                put("criterion", format!("{:?}", self.criterion));
                put("max_evals", self.max_evals.to_string());
                put("tol", self.tol.to_string());
                put("restarts", self.restarts.to_string());
                put("seed", self.seed.to_string());
            }
            "reconstruct" => {
                put("reconstruct_speaker", self.reconstruct_speaker.to_string());
                put("reconstruct_sentence", self.reconstruct_sentence.to_string());
            }
            _ => {}
        }
        s
    }

    /// Every setting, in a fixed order.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for stage in crate::pipeline::STAGES {
            let _ = writeln!(s, "[{stage}]");
            s.push_str(&self.section(stage));
        }
        s
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_comments() {
        let c = PipelineConfig::parse("# comment\n\ngrid_size = 16\nlambda = auto\n").unwrap();
        assert_eq!(c, PipelineConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        let e = PipelineConfig::parse("gridsize = 16").unwrap_err();
        assert!(e.to_string().contains("unknown key gridsize"), "{e}");
    }

    #[test]
    fn ranges_checked() {
        for line in [
            "grid_size = 2",
            "bandwidth = 0",
            "bandwidth = 1.5",
            "lambda = -1",
            "nstar = 0",
            "metric = mean",
            "jnd_amp = -3",
            "registration = dtw",
            "scalar_residual = maybe",
            "max_missing_fraction = 0",
        ] {
            assert!(PipelineConfig::parse(line).is_err(), "{line}");
        }
    }

    #[test]
    fn sections_are_independent() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.set("jnd_amp", "12").unwrap();
        assert_eq!(a.section("register"), b.section("register"));
        assert_ne!(a.section("decompose"), b.section("decompose"));
    }

    #[test]
    fn bandwidth_follows_fixed_mode() {
        let c = PipelineConfig::parse("bandwidth_mode = fixed\nbandwidth = 0.1").unwrap();
        assert_eq!(c.bandwidth_mode, BandwidthMode::Fixed(0.1));
        let c = PipelineConfig::parse("bandwidth_mode = cv\nbandwidth = 0.1").unwrap();
        assert_eq!(c.bandwidth_mode, BandwidthMode::CrossValidated);
    }
}
