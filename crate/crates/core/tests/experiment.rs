use std::collections::BTreeSet;

use kamlab::experiment::{
    convergence_report, diff_artifacts, export_all, run_config, sha256_file, ExperimentConfig, ExperimentKind,
    ExperimentResults, Provenance, StageStatus, MANIFEST, TIMING,
};
use kamlab::hj::{SolveReport, SweepEntry};
use kamlab::mather::DiscreteMeasure;
use kamlab::models::velocity_set;
use kamlab::torus::{GridField, PeriodicGrid};

const BARRIER_SUITE: &str = r#"
kind = "barrier_suite"
seed = 11

[model]
name = "mechanical"
potential_u = "cos(1)"

[grid]
d = 1
n = 16

[vset]
vmax = 3.0
m = 9

[critical]
methods = ["lp", "discount"]

[suite]
triples = 200

[thresholds]
column_residual = 1e-6
"#;

fn report(lambda: f64) -> SolveReport {
    SolveReport {
        lambda,
        iterations: 3,
        final_residual: 0.0,
        bracket_violations: 0,
        converged: true,
        above_lambda0: false,
        residual_history: Vec::new(),
    }
}

fn entry(lambda: f64, f: &GridField) -> SweepEntry {
    SweepEntry { lambda, result: Ok((f.clone(), report(lambda))) }
}

fn grid(n: usize) -> PeriodicGrid {
    PeriodicGrid::new(1, n).unwrap()
}

fn file_names(dir: &std::path::Path) -> BTreeSet<String> {
    std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect()
}

#[test]
fn identical_fields_have_zero_error() {
    let g = grid(8);
    let f = GridField::from_fn(g, |x| x.coords()[0].sin()).unwrap();
    let sweep = vec![entry(0.1, &f), entry(0.01, &f), entry(0.001, &f)];
    let r = convergence_report(&sweep, &f, Provenance::Formula).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert!(r.rows.iter().all(|row| row.error == Some(0.0)));
    assert!(r.monotone);
}

#[test]
fn extrapolated_reference_ends_at_zero() {
    let g = grid(8);
    let fields: Vec<GridField> = (1..=4).map(|k| GridField::constant(g, 1.0 / k as f64)).collect();
    let sweep: Vec<SweepEntry> = fields.iter().enumerate().map(|(k, f)| entry(0.1 / (k + 1) as f64, f)).collect();
    let r = convergence_report(&sweep, fields.last().unwrap(), Provenance::Extrapolation).unwrap();
    assert_eq!(r.final_error(), Some(0.0));
    assert_eq!(r.provenance, Provenance::Extrapolation);
}

#[test]
fn monotonicity_allows_factor_two() {
    let g = grid(4);
    let zero = GridField::constant(g, 0.0);
    let make = |errs: &[f64]| -> Vec<SweepEntry> {
        errs.iter().enumerate().map(|(k, e)| entry(1.0 / (k + 1) as f64, &GridField::constant(g, *e))).collect()
    };
    assert!(convergence_report(&make(&[0.4, 0.7, 0.3]), &zero, Provenance::Analytic).unwrap().monotone);
    assert!(!convergence_report(&make(&[0.4, 0.9, 0.3]), &zero, Provenance::Analytic).unwrap().monotone);
}

#[test]
fn failed_solves_leave_empty_rows() {
    let g = grid(4);
    let zero = GridField::constant(g, 0.0);
    let sweep = vec![entry(0.1, &zero), SweepEntry { lambda: 0.01, result: Err(kamlab::Error::Lp("stalled".into())) }];
    let r = convergence_report(&sweep, &zero, Provenance::Formula).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert_eq!(r.rows[1].error, None);
    assert!(!r.monotone);
    assert!(convergence_report(&[], &zero, Provenance::Formula).is_err());
}

#[test]
fn empty_results_export_only_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let files = export_all(&ExperimentResults::default(), dir.path()).unwrap();
    assert_eq!(files, vec![dir.path().join(MANIFEST)]);
    assert_eq!(file_names(dir.path()), BTreeSet::from([MANIFEST.to_string()]));
}

#[test]
fn measure_field_and_report_give_three_csvs() {
    let g = grid(8);
    let vs = velocity_set(1.0, 3, 1).unwrap();
    let mu = DiscreteMeasure::dirac(g, vs, 0, 1);
    let f = GridField::constant(g, 0.5);
    let rep = convergence_report(&[entry(0.1, &f)], &f, Provenance::Analytic).unwrap();
    let mut res = ExperimentResults::default();
    res.file("measure.csv", |w| mu.write_csv(w));
    res.file("field.csv", |w| f.write_csv(w));
    res.file("report.csv", |w| rep.write_csv(w));
    let dir = tempfile::tempdir().unwrap();
    export_all(&res, dir.path()).unwrap();
    let names = file_names(dir.path());
    assert_eq!(names.len(), 4);
    assert_eq!(names.iter().filter(|n| n.ends_with(".csv")).count(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest["files"]["field.csv"].as_str().unwrap(), sha256_file(&dir.path().join("field.csv")).unwrap());
}

#[test]
fn unwritable_directory_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let err = export_all(&ExperimentResults::default(), &blocker.join("sub")).unwrap_err();
    assert!(err.to_string().contains("file"), "{err}");
}

#[test]
fn same_config_gives_identical_artifacts() {
    let cfg = ExperimentConfig::from_toml(BARRIER_SUITE).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_config(&cfg);
    export_all(&ra, a.path()).unwrap();
    export_all(&run_config(&cfg), b.path()).unwrap();
    assert!(ra.pass(), "{:?}", ra.checks);
    assert!(file_names(a.path()).contains(TIMING));
    assert!(file_names(a.path()).contains("barrier.pbar"));
    assert!(file_names(a.path()).contains("barrier.csv"));
    assert_eq!(diff_artifacts(a.path(), b.path()).unwrap(), vec![]);
    for name in file_names(a.path()) {
        if name != TIMING {
            assert_eq!(sha256_file(&a.path().join(&name)).unwrap(), sha256_file(&b.path().join(&name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn manifest_records_parameters_and_seed() {
    let cfg = ExperimentConfig::from_toml(BARRIER_SUITE).unwrap();
    let m = run_config(&cfg).manifest();
    assert_eq!(m["kind"], "barrier_suite");
    assert_eq!(m["seed"], 11);
    assert_eq!(m["config"]["grid"]["n"], 16);
    assert_eq!(m["config"]["barrier"]["t_max"], 8.0);
    assert!(m["metrics"]["dt"].as_f64().unwrap() > 0.0);
    assert!(m["metrics"]["tol_min"].as_f64().unwrap() > 0.0);
    assert_eq!(m["failed_stage"], serde_json::Value::Null);
}

#[test]
fn failing_stage_keeps_partial_artifacts() {
    let text = r#"
kind = "operator_suite"
[model]
name = "mechanical"
potential_u = "cos(1)"
[grid]
d = 1
n = 16
[vset]
vmax = 3.0
m = 9
[critical]
methods = ["lp"]
[suite]
pairs = 1
sources = [0]
shifts = []
"#;
    let res = run_config(&ExperimentConfig::from_toml(text).unwrap());
    let failed = res.failed_stage().expect("comparison stage fails with one candidate");
    assert_eq!(failed.name, "comparison");
    assert_eq!(failed.status, StageStatus::Failed);
    assert!(res.files.contains_key("barrier.pbar"));
    assert!(res.files.contains_key("operator_pairs.csv"));
    assert!(!res.pass());
    let dir = tempfile::tempdir().unwrap();
    export_all(&res, dir.path()).unwrap();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
    assert_eq!(manifest["failed_stage"], "comparison");
    assert_eq!(manifest["pass"], false);
}

#[test]
fn nonexistence_run_records_certificates() {
    let text = r#"
kind = "nonexistence_3_4"
[model]
name = "arctan_discount"
[grid]
d = 1
n = 16
[vset]
vmax = 2.0
m = 9
[solver]
max_iter = 5000
lambdas = [2.0, 0.5]
[critical]
methods = ["lp"]
"#;
    let cfg = ExperimentConfig::from_toml(text).unwrap();
    assert_eq!(cfg.kind, ExperimentKind::Nonexistence);
    let res = run_config(&cfg);
    let rows = res.metrics["certificates"].as_array().unwrap();
    assert_eq!(rows[0]["certificate"], true);
    assert_eq!(rows[0]["converged"], false);
    assert_eq!(rows[1]["certificate"], false);
    assert_eq!(rows[1]["converged"], true);
    assert!(res.pass(), "{:?}", res.checks);
}

#[test]
fn strict_mode_fails_on_warnings() {
    let mut res = ExperimentResults::default();
    res.warn("increase Tmax");
    assert!(res.pass());
    res.strict = true;
    assert!(!res.pass());
}
