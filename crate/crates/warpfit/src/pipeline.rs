//! Stage sequencing with a manifest-based cache.
//!
//! Each stage writes into its own subdirectory of the output directory.
//! Its cache key hashes the stage's config section together with the keys
//! of the stages it reads from, so a change only re-runs the stages
//! downstream of it. `manifest.json` records every stage's key and the
//! SHA-256 of each output file; a stage is skipped when its key matches and
//! the files on disk still carry the recorded checksums.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::io::{file_sha256, sha256_hex};
use crate::stages;

pub const STAGES: [&str; 6] = ["smooth", "register", "transform", "decompose", "fit", "reconstruct"];

pub const MANIFEST: &str = "manifest.json";

/// Stages whose keys feed into each stage's key.
fn upstream(stage: &str) -> &'static [&'static str] {
    match stage {
        "register" => &["smooth"],
        "transform" => &["register"],
        "decompose" => &["register", "transform"],
        "fit" => &["smooth", "decompose"],
        "reconstruct" => &["smooth", "decompose", "fit"],
        _ => &[],
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    /// Output path relative to the output directory -> SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Some(serde_json::from_str(&text)?))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        crate::artifacts::write_json(&dir.join(MANIFEST), self)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunReport {
    pub executed: Vec<&'static str>,
    pub cached: Vec<&'static str>,
    /// Warnings and notes from the executed stages.
    pub notes: Vec<String>,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub out: PathBuf,
    /// Curves to include in the reconstruction report (all when `None`).
    pub ids: Option<Vec<String>>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, out: impl Into<PathBuf>) -> Self {
        Self {
            config,
            out: out.into(),
            ids: None,
        }
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.config.canonical().as_bytes())
    }

    pub fn run(&self) -> Result<RunReport> {
        self.run_through("reconstruct")
    }

    /// Runs every stage up to and including `last`, reusing cached ones.
    pub fn run_through(&self, last: &str) -> Result<RunReport> {
        let end = STAGES
            .iter()
            .position(|s| *s == last)
            .ok_or_else(|| Error::Config(format!("unknown stage {last}")))?;
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let mut manifest = Manifest::load(&self.out).ok().flatten().unwrap_or_default();
        manifest.config_hash = self.config_hash();
        manifest.seed = self.config.seed;
        let mut report = RunReport::default();
        let mut keys: BTreeMap<&str, String> = BTreeMap::new();
        for &stage in &STAGES[..=end] {
            let key = self.stage_key(stage, &keys).map_err(|e| wrap(stage, e))?;
            keys.insert(stage, key.clone());
            if let Some(rec) = manifest.stages.get(stage) {
                if rec.key == key && self.verify(rec) {
                    report.cached.push(stage);
                    continue;
                }
            }
            manifest.stages.remove(stage);
            let dir = self.out.join(stage);
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| wrap(stage, Error::io(&dir, e)))?;
            }
            std::fs::create_dir_all(&dir).map_err(|e| wrap(stage, Error::io(&dir, e)))?;
            let result = stages::execute(stage, &self.config, &self.out, self.ids.as_deref());
            let notes = match result {
                Ok(n) => n,
                Err(e) => {
                    // keep what was written so far, but never cache it
                    manifest.save(&self.out)?;
                    return Err(wrap(stage, e));
                }
            };
            report.notes.extend(notes.into_iter().map(|n| format!("{stage}: {n}")));
            let outputs = self.checksums(&dir).map_err(|e| wrap(stage, e))?;
            manifest.stages.insert(stage.to_string(), StageRecord { key, outputs });
            manifest.save(&self.out)?;
            report.executed.push(stage);
        }
        manifest.save(&self.out)?;
        Ok(report)
    }

    fn stage_key(&self, stage: &str, keys: &BTreeMap<&str, String>) -> Result<String> {
        let mut text = format!("stage={stage}\n{}", self.config.section(stage));
        for up in upstream(stage) {
            text.push_str(&format!("{up}={}\n", keys[up]));
        }
        match stage {
            "smooth" => {
                let (curves, covariates) = stages::input_files(&self.config)?;
                text.push_str(&format!("curves={}\n", file_sha256(&curves)?));
                text.push_str(&format!("covariates={}\n", file_sha256(&covariates)?));
            }
            "reconstruct" => {
                if let Some(ids) = &self.ids {
                    text.push_str(&format!("ids={}\n", ids.join(",")));
                }
            }
            _ => {}
        }
        Ok(sha256_hex(text.as_bytes()))
    }

    fn verify(&self, rec: &StageRecord) -> bool {
        rec.outputs
            .iter()
            .all(|(file, sum)| file_sha256(&self.out.join(file)).is_ok_and(|s| &s == sum))
    }

    fn checksums(&self, dir: &Path) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for path in entries {
            let rel = path
                .strip_prefix(&self.out)
                .expect("stage files live under the output directory")
                .to_string_lossy()
                .replace('\\', "/");
            out.insert(rel, file_sha256(&path)?);
        }
        Ok(out)
    }
}

fn wrap(stage: &'static str, e: Error) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage,
            source: Box::new(other),
        },
    }
}
