use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kamlab::experiment::{diff_artifacts, run_experiment, ExperimentConfig, RunOptions, StageStatus, OUTPUT_ROOT_ENV};
use kamlab::models::BUILTIN_MODELS;

const EXIT_CHECKS_FAILED: u8 = 1;
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "kamlab", version, about = "Discounted Hamilton-Jacobi experiments on flat tori")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run {
        config: PathBuf,
        /// Artifact directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Treat warnings as failures.
        #[arg(long)]
        strict: bool,
    },
    /// Check a config file without running it.
    Validate { config: PathBuf },
    /// Print the built-in model names.
    ListModels,
    /// Compare two artifact directories byte for byte.
    DiffArtifacts { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    }
    match cli.command {
        Command::Run { config, output, strict } => run(config, output, strict),
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok(cfg) => {
                println!("{}: valid {} config", config.display(), cfg.kind.as_str());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_ERROR)
            }
        },
        Command::ListModels => {
            for m in BUILTIN_MODELS {
                println!("{m}");
            }
            ExitCode::SUCCESS
        }
        Command::DiffArtifacts { a, b } => match diff_artifacts(&a, &b) {
            Ok(diffs) if diffs.is_empty() => {
                println!("identical");
                ExitCode::SUCCESS
            }
            Ok(diffs) => {
                for d in diffs {
                    println!("{d}");
                }
                ExitCode::from(EXIT_CHECKS_FAILED)
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_ERROR)
            }
        },
    }
}

fn run(config: PathBuf, output: Option<PathBuf>, strict: bool) -> ExitCode {
    let opts = RunOptions { output, strict };
    let outcome = match run_experiment(&config, &opts) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, kamlab::Error::Io { .. }) {
                eprintln!("hint: set --output or {OUTPUT_ROOT_ENV} to a writable directory");
            }
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let r = &outcome.results;
    for s in &r.stages {
        match s.status {
            StageStatus::Ok => println!("stage {:<18} ok      {:8.2}s", s.name, s.seconds),
            StageStatus::Failed => {
                println!("stage {:<18} FAILED  {:8.2}s  {}", s.name, s.seconds, s.error.as_deref().unwrap_or(""))
            }
        }
    }
    for (name, c) in &r.checks {
        let value = match (c.value, c.threshold) {
            (Some(v), Some(t)) => format!("{v:.3e} <= {t:.3e}"),
            _ => c.detail.clone().unwrap_or_default(),
        };
        println!("check {:<28} {}  {value}", name, if c.pass { "PASS" } else { "FAIL" });
    }
    for w in &r.warnings {
        println!("warning: {w}");
    }
    println!("artifacts: {}", outcome.dir.display());
    if r.failed_stage().is_some() {
        ExitCode::from(EXIT_ERROR)
    } else if r.pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECKS_FAILED)
    }
}
