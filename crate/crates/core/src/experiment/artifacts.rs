//! In-memory experiment results, the manifest and deterministic export.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const TIMING: &str = "timing.json";
pub const MANIFEST_FORMAT: u32 = 1;

/// Outcome of one acceptance threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    /// `value ≤ threshold`; NaN fails.
    pub fn at_most(value: f64, threshold: f64) -> Self {
        Self { pass: value <= threshold, value: Some(value), threshold: Some(threshold), detail: None }
    }

    pub fn flag(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, value: None, threshold: None, detail: Some(detail.into()) }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub seconds: f64,
}

/// Everything a run produced, keyed by artifact file name.
#[derive(Clone, Debug, Default)]
pub struct ExperimentResults {
    pub config: Option<ExperimentConfig>,
    pub files: BTreeMap<String, Vec<u8>>,
    pub metrics: BTreeMap<String, Value>,
    pub checks: BTreeMap<String, Check>,
    pub warnings: Vec<String>,
    pub stages: Vec<StageRecord>,
    pub strict: bool,
}

impl ExperimentResults {
    pub fn new(config: ExperimentConfig) -> Self {
        Self { config: Some(config), ..Self::default() }
    }

    pub fn kind(&self) -> Option<ExperimentKind> {
        self.config.as_ref().map(|c| c.kind)
    }

    pub fn failed_stage(&self) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.status == StageStatus::Failed)
    }

    /// No failed stage, every check passes and, under `strict`, no warnings.
    pub fn pass(&self) -> bool {
        self.failed_stage().is_none()
            && self.checks.values().all(|c| c.pass)
            && !(self.strict && !self.warnings.is_empty())
    }

    /// Runs `f` as a named stage; a failure is recorded and returned.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self);
        let seconds = start.elapsed().as_secs_f64();
        let (status, error) = match &out {
            Ok(_) => (StageStatus::Ok, None),
            Err(e) => (StageStatus::Failed, Some(e.to_string())),
        };
        self.stages.push(StageRecord { name: name.to_string(), status, error, seconds });
        out
    }

    pub fn metric(&mut self, key: impl Into<String>, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("metric serializes");
        self.metrics.insert(key.into(), v);
    }

    pub fn check(&mut self, key: impl Into<String>, check: Check) {
        self.checks.insert(key.into(), check);
    }

    pub fn warn(&mut self, w: impl Into<String>) {
        let w = w.into();
        if !self.warnings.contains(&w) {
            self.warnings.push(w);
        }
    }

    /// Stores the bytes written by `f` under `name`.
    pub fn file(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) {
        let mut buf = Vec::new();
        f(&mut buf).expect("writing to a Vec cannot fail");
        self.files.insert(name.into(), buf);
    }

    pub fn json_file(&mut self, name: impl Into<String>, value: &impl Serialize) {
        let mut buf = serde_json::to_vec_pretty(value).expect("artifact serializes");
        buf.push(b'\n');
        self.files.insert(name.into(), buf);
    }

    /// Manifest contents; file hashes are over the stored bytes.
    pub fn manifest(&self) -> Value {
        let files: BTreeMap<&str, String> =
            self.files.iter().map(|(k, v)| (k.as_str(), hex::encode(Sha256::digest(v)))).collect();
        json!({
            "format": MANIFEST_FORMAT,
            "kamlab_version": env!("CARGO_PKG_VERSION"),
            "kind": self.kind().map(|k| k.as_str()),
            "seed": self.config.as_ref().map(|c| c.seed),
            "config": self.config,
            "strict": self.strict,
            "stages": self.stages,
            "failed_stage": self.failed_stage().map(|s| s.name.clone()),
            "metrics": self.metrics,
            "checks": self.checks,
            "warnings": self.warnings,
            "pass": self.pass(),
            "files": files,
        })
    }

    pub fn timing(&self) -> Value {
        let stages: Vec<Value> = self.stages.iter().map(|s| json!({"name": s.name, "seconds": s.seconds})).collect();
        let total: f64 = self.stages.iter().map(|s| s.seconds).sum();
        json!({ "stages": stages, "total_seconds": total })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Writes every artifact, the manifest and, when stages ran, the timing file.
pub fn export_all(results: &ExperimentResults, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, bytes) in &results.files {
        let path = dir.join(name);
        write_file(&path, bytes)?;
        written.push(path);
    }
    let mut manifest = serde_json::to_vec_pretty(&results.manifest()).expect("manifest serializes");
    manifest.push(b'\n');
    let path = dir.join(MANIFEST);
    write_file(&path, &manifest)?;
    written.push(path);
    if !results.stages.is_empty() {
        let mut timing = serde_json::to_vec_pretty(&results.timing()).expect("timing serializes");
        timing.push(b'\n');
        let path = dir.join(TIMING);
        write_file(&path, &timing)?;
        written.push(path);
    }
    Ok(written)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// One difference between two artifact directories.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ArtifactDiff {
    OnlyIn { dir: PathBuf, file: String },
    Differs { file: String },
}

impl std::fmt::Display for ArtifactDiff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::OnlyIn { dir, file } => write!(f, "only in {}: {file}", dir.display()),
            Self::Differs { file } => write!(f, "differs: {file}"),
        }
    }
}

fn listing(dir: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.path().is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if name != TIMING {
                out.insert(name);
            }
        }
    }
    Ok(out)
}

/// Byte-level comparison of two artifact directories, ignoring the timing file.
pub fn diff_artifacts(a: &Path, b: &Path) -> Result<Vec<ArtifactDiff>> {
    let (la, lb) = (listing(a)?, listing(b)?);
    let mut diffs = Vec::new();
    for name in la.union(&lb) {
        match (la.contains(name), lb.contains(name)) {
            (true, false) => diffs.push(ArtifactDiff::OnlyIn { dir: a.to_path_buf(), file: name.clone() }),
            (false, true) => diffs.push(ArtifactDiff::OnlyIn { dir: b.to_path_buf(), file: name.clone() }),
            _ => {
                if sha256_file(&a.join(name))? != sha256_file(&b.join(name))? {
                    diffs.push(ArtifactDiff::Differs { file: name.clone() });
                }
            }
        }
    }
    Ok(diffs)
}
