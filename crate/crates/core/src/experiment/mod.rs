//! Config-driven experiment runs with deterministic artifacts.
//!
//! A run executes named stages in order. Each stage adds metrics, checks,
//! warnings and artifact files to an [`ExperimentResults`]; a failing stage
//! stops the run but keeps everything produced so far.

mod artifacts;
mod config;
mod pipelines;
mod report;

use std::path::{Path, PathBuf};

pub use artifacts::{diff_artifacts, export_all, sha256_file, ArtifactDiff, Check, ExperimentResults, StageRecord, StageStatus, MANIFEST, TIMING};
pub use config::{
    CriticalConfig, ExperimentConfig, ExperimentKind, GridConfig, ModelConfig, OutputConfig, SolverConfig, SuiteConfig, Thresholds,
    VsetConfig,
};
pub use pipelines::run_config;
pub use report::{convergence_report, factor_two_monotone, ConvergenceReport, ConvergenceRow, Provenance};

use crate::error::Result;

/// Environment variable prefixed to relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "KAMLAB_OUTPUT_ROOT";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Overrides the configured output directory.
    pub output: Option<PathBuf>,
    /// Warnings count as failures.
    pub strict: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub results: ExperimentResults,
}

/// `--output`, else `[output] dir`, else `artifacts/<config stem>`; relative
/// paths other than `--output` are placed under the output root when set.
pub fn output_dir(config_path: &Path, cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    if let Some(dir) = &opts.output {
        return dir.clone();
    }
    let dir = match &cfg.output.dir {
        Some(d) => PathBuf::from(d),
        None => {
            let stem = config_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
            Path::new("artifacts").join(stem)
        }
    };
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

/// Loads, validates and runs a config file, then exports the artifacts.
pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    let cfg = ExperimentConfig::load(config_path)?;
    let dir = output_dir(config_path, &cfg, opts);
    let mut results = run_config(&cfg);
    results.strict = opts.strict;
    let files = export_all(&results, &dir)?;
    Ok(RunOutcome { dir, files, results })
}
