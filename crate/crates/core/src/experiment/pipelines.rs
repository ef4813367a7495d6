use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::artifacts::{Check, ExperimentResults};
use super::config::{ExperimentConfig, ExperimentKind};
use super::report::{convergence_report, factor_two_monotone, ConvergenceReport, Provenance};
use crate::barrier::{aubry_set, critical_residual, critical_value, peierls_barrier, BarrierMatrix, CriticalData, CriticalMethod, CriticalParams};
use crate::curves::{
    backward_calibrated_curve, check_calibration, check_mass_identity, occupation_measure, speed_bound, speed_bound_check,
    CurveParams,
};
use crate::error::{Error, Result};
use crate::hj::{
    compute_bracket, critical_solution, lambda_sweep, nonexistence_certificate, solve_perturbed, Bracket, SolverParams,
    SweepEntry,
};
use crate::mather::{closedness_defect, closedness_operator, graph_check, solve_mather_lp, tv_distance, DiscreteMeasure, MatherPolytope};
use crate::models::{ControlModel, VelocitySet};
use crate::selection::{
    apply_selection_operator, candidate_solutions, check_fixed_point, check_operator_lipschitz, equilibrium_measures,
    limit_solution_formula, measure_comparison,
};
use crate::torus::{GridField, PeriodicGrid};

/// Absolute tolerance of the LP structural checks.
const LP_TOL: f64 = 1e-9;
/// Diagonal tolerance defining the discrete Aubry set.
const AUBRY_TOL: f64 = 1e-9;

struct Setup {
    model: ControlModel,
    grid: PeriodicGrid,
    vset: VelocitySet,
    dt: f64,
    solver: SolverParams,
}

/// Runs the pipeline for `cfg.kind`, keeping whatever was produced before a failing stage.
pub fn run_config(cfg: &ExperimentConfig) -> ExperimentResults {
    let mut res = ExperimentResults::new(cfg.clone());
    let _ = match cfg.kind {
        ExperimentKind::VanishingDiscount | ExperimentKind::ShiftedQuadraticLimit => limit_pipeline(cfg, &mut res),
        ExperimentKind::Nonexistence => nonexistence_pipeline(cfg, &mut res),
        ExperimentKind::OperatorSuite => operator_pipeline(cfg, &mut res),
        ExperimentKind::OccupationSuite => occupation_pipeline(cfg, &mut res),
        ExperimentKind::BarrierSuite => barrier_pipeline(cfg, &mut res),
    };
    res
}

fn setup(cfg: &ExperimentConfig, res: &mut ExperimentResults) -> Result<Setup> {
    res.stage("setup", |res| {
        let model = cfg.build_model()?;
        let grid = cfg.build_grid()?;
        let vset = cfg.build_vset()?;
        model.check_invariants(&grid, &vset)?;
        let dt = cfg.dt()?;
        let solver = cfg.solver_params()?;
        res.metric("dt", dt);
        res.metric("spacing", grid.spacing());
        res.metric("nodes", grid.len());
        res.metric("velocities", vset.len());
        res.metric("velocity_step", vset.step());
        res.metric("solver", &solver);
        Ok(Setup { model, grid, vset, dt, solver })
    })
}

fn critical_params(cfg: &ExperimentConfig, s: &Setup) -> CriticalParams {
    CriticalParams {
        dt: Some(s.dt),
        discount_lambdas: cfg.critical.discount_lambdas.clone(),
        longtime_t: cfg.critical.longtime_t,
        solver: s.solver.clone(),
        ..CriticalParams::new(s.grid, s.vset.clone())
    }
}

/// Writes the LP measure and records its structural checks.
fn lp_structure(res: &mut ExperimentResults, mu: &DiscreteMeasure, s: &Setup) {
    let op = closedness_operator(&s.grid, &s.vset, s.dt);
    let mass = mu.mass();
    let defect = closedness_defect(mu, &op);
    let graph = graph_check(mu, LP_TOL);
    res.metric("lp.mass", mass);
    res.metric("lp.closedness_defect", defect);
    res.metric("lp.graph_max_spread", graph.max_spread);
    res.check("lp_mass", Check::at_most((mass - 1.0).abs(), LP_TOL));
    res.check("lp_closedness", Check::at_most(defect, LP_TOL));
    res.check("lp_graph", Check::at_most(graph.max_spread, graph.threshold));
    res.file("mather_measure.csv", |w| mu.write_csv(w));
    res.file("mather_projected.csv", |w| mu.write_projected_csv(w));
}

/// Critical value, then the model is re-anchored at the computed value.
fn critical(cfg: &ExperimentConfig, res: &mut ExperimentResults, s: &mut Setup) -> Result<(CriticalData, f64)> {
    let data = res.stage("critical_value", |res| {
        let data = critical_value(&s.model, &cfg.critical.methods, &critical_params(cfg, s))?;
        res.metric("critical.c", data.c);
        res.metric("critical.method", data.method);
        for (m, c) in &data.estimates {
            res.metric(format!("critical.{}", method_name(*m)), c);
        }
        if let Some(spread) = data.spread {
            res.metric("critical.spread", spread);
            res.check("critical_spread", Check::at_most(spread, cfg.thresholds.spread));
        }
        if let Some(exact) = s.model.analytic_critical_value() {
            res.metric("critical.analytic", exact);
            let worst = data.estimates.iter().map(|(_, c)| (c - exact).abs()).fold(0.0, f64::max);
            res.check("critical_analytic", Check::at_most(worst, cfg.thresholds.critical));
        }
        if let Some(mu) = &data.lp_measure {
            lp_structure(res, mu, s);
        }
        Ok(data)
    })?;
    let tol_min = match (data.estimate(CriticalMethod::Lp), data.estimate(CriticalMethod::Discount)) {
        (Some(a), Some(b)) => 2.0 * (a - b).abs(),
        _ => 0.0,
    }
    .max(crate::mather::DEFAULT_TOL_MIN_FLOOR);
    res.metric("tol_min", tol_min);
    s.model = s.model.clone().with_critical_value(data.c);
    Ok((data, tol_min))
}

fn method_name(m: CriticalMethod) -> &'static str {
    match m {
        CriticalMethod::Lp => "lp",
        CriticalMethod::Discount => "discount",
        CriticalMethod::Longtime => "longtime",
    }
}

fn bracket(res: &mut ExperimentResults, s: &Setup) -> Result<Bracket> {
    res.stage("bracket", |res| {
        let crit = critical_solution(&s.model, s.grid, &s.vset, s.dt, s.solver.max_iter)?;
        let b = compute_bracket(&s.model, &crit, &s.vset)?;
        res.metric("bracket", &b);
        res.file("critical_solution.csv", |w| crit.write_csv(w));
        Ok(b)
    })
}

fn sweep(cfg: &ExperimentConfig, res: &mut ExperimentResults, s: &Setup, b: &Bracket) -> Result<Vec<SweepEntry>> {
    res.stage("lambda_sweep", |res| {
        let entries = lambda_sweep(&s.model, s.grid, &cfg.solver.lambdas, &s.vset, b, &s.solver)?;
        for (k, e) in entries.iter().enumerate() {
            match &e.result {
                Ok((u, rep)) => {
                    res.file(format!("u_lambda_{k:02}.csv"), |w| u.write_csv(w));
                    if !rep.converged {
                        res.warn(format!("solve at λ = {} stopped at residual {:.3e}", e.lambda, rep.final_residual));
                    }
                    if rep.above_lambda0 {
                        res.warn(format!("λ = {} exceeds λ0 = {}", e.lambda, b.lambda0));
                    }
                }
                Err(err) => res.warn(format!("solve at λ = {} failed: {err}", e.lambda)),
            }
        }
        if entries.iter().all(|e| e.result.is_err()) {
            return Err(Error::Model("every solve in the λ schedule failed".into()));
        }
        Ok(entries)
    })
}

fn barrier(cfg: &ExperimentConfig, res: &mut ExperimentResults, s: &Setup, c: f64) -> Result<BarrierMatrix> {
    res.stage("peierls_barrier", |res| {
        let h = peierls_barrier(&s.model, s.grid, c, &cfg.barrier, s.dt, &s.vset)?;
        for w in h.warnings() {
            res.warn(w.clone());
        }
        res.metric("barrier.max_abs", h.max_abs());
        res.file("barrier.pbar", |w| h.write_binary(w));
        if s.grid.len() <= 64 {
            res.file("barrier.csv", |w| h.write_csv(w));
        }
        Ok(h)
    })
}

fn polytope(res: &mut ExperimentResults, s: &Setup, data: &CriticalData, tol_min: f64) -> Result<MatherPolytope> {
    res.stage("mather_polytope", |res| {
        let p = MatherPolytope::new(&s.model, s.grid, &s.vset, s.dt)?;
        let c = match data.estimate(CriticalMethod::Lp) {
            Some(c) => c,
            None => {
                let out = solve_mather_lp(&p)?;
                lp_structure(res, &out.measure, s);
                -out.value
            }
        };
        res.metric("polytope.c", c);
        Ok(p.with_minimality(c, tol_min))
    })
}

fn v0_field(s: &Setup) -> Result<GridField> {
    GridField::from_fn(s.grid, |x| s.model.potential_at(x.coords(), 0.0))
}

fn sigma_field(s: &Setup) -> Result<GridField> {
    GridField::from_fn(s.grid, |x| s.model.sigma(x.coords()))
}

fn record_report(
    res: &mut ExperimentResults,
    name: &str,
    report: &ConvergenceReport,
    threshold: f64,
    monotone_check: bool,
) {
    res.file(format!("convergence_{name}.csv"), |w| report.write_csv(w));
    res.metric(format!("convergence.{name}"), report);
    let err = report.final_error().unwrap_or(f64::NAN);
    res.check(format!("final_error_{name}"), Check::at_most(err, threshold));
    if monotone_check {
        res.check(format!("monotone_{name}"), Check::flag(report.monotone, "errors nonincreasing within factor 2"));
    }
}

fn limit_pipeline(cfg: &ExperimentConfig, res: &mut ExperimentResults) -> Result<()> {
    let mut s = setup(cfg, res)?;
    let (data, tol_min) = critical(cfg, res, &mut s)?;
    let b = bracket(res, &s)?;
    let entries = sweep(cfg, res, &s, &b)?;
    let h = barrier(cfg, res, &s, data.c)?;
    let p = polytope(res, &s, &data, tol_min)?;
    let v0 = v0_field(&s)?;
    let u0 = res.stage("limit_formula", |res| {
        let r = limit_solution_formula(&s.model, &v0, &h, &p)?;
        res.file("limit_formula.csv", |w| r.write_values_csv(w));
        res.metric("limit_formula.multiplicity_nodes", r.multiplicity.iter().filter(|&&m| m).count());
        Ok(r.field)
    })?;
    res.stage("convergence", |res| {
        let formula = convergence_report(&entries, &u0, Provenance::Formula)?;
        let example = cfg.kind == ExperimentKind::ShiftedQuadraticLimit;
        record_report(res, "formula", &formula, cfg.thresholds.final_error, false);
        if example {
            let r = cfg.suite.reference.unwrap_or_else(|| v0.mean());
            res.metric("reference.analytic", r);
            let reference = GridField::constant(s.grid, r);
            let analytic = convergence_report(&entries, &reference, Provenance::Analytic)?;
            record_report(res, "analytic", &analytic, cfg.thresholds.final_error, true);
        } else {
            let aubry = aubry_set(&h, AUBRY_TOL);
            res.metric("aubry_set", &aubry);
            if let [a] = aubry.nodes[..] {
                // unique Mather measure δ_(a,0)
                let xa = s.grid.node(a);
                let zero = [0.0; 2];
                let dl = s.model.dl_du0(xa.coords(), &zero[..s.grid.dim()]);
                let shift = v0.value(a) / dl;
                let column = GridField::new(s.grid, h.row(a).iter().map(|v| v + shift).collect())?;
                let report = convergence_report(&entries, &column, Provenance::Formula)?;
                record_report(res, "column", &report, cfg.thresholds.final_error, false);
            }
        }
        Ok(())
    })
}

fn nonexistence_pipeline(cfg: &ExperimentConfig, res: &mut ExperimentResults) -> Result<()> {
    let mut s = setup(cfg, res)?;
    critical(cfg, res, &mut s)?;
    let b = bracket(res, &s)?;
    res.stage("certificates", |res| {
        let mut rows = Vec::new();
        for &lambda in &cfg.solver.lambdas {
            let certificate = nonexistence_certificate(&s.model, lambda);
            let (u, rep) = solve_perturbed(&s.model, s.grid, lambda, &s.vset, &b, &s.solver, None)?;
            let solved = rep.converged && rep.bracket_violations == 0;
            let consistent = certificate != solved;
            res.check(
                format!("certificate_lambda_{lambda}"),
                Check::flag(consistent, format!("certificate={certificate}, solver converged={solved}")),
            );
            rows.push(json!({
                "lambda": lambda,
                "certificate": certificate,
                "converged": rep.converged,
                "bracket_violations": rep.bracket_violations,
                "iterations": rep.iterations,
                "residual": rep.final_residual,
                "min": u.min(),
                "max": u.max(),
            }));
        }
        res.metric("certificates", rows);
        Ok(())
    })
}

/// Σ_k a_k cos(2π k·x + θ_k) with three random modes.
fn random_smooth_field(grid: PeriodicGrid, rng: &mut ChaCha8Rng) -> Result<GridField> {
    let d = grid.dim();
    let modes: Vec<([f64; 2], f64, f64)> = (1..=3)
        .map(|j| {
            let mut k = [0.0; 2];
            for c in k.iter_mut().take(d) {
                *c = rng.random_range(-2i32..=2) as f64;
            }
            if k[..d].iter().all(|&c| c == 0.0) {
                k[0] = j as f64;
            }
            (k, rng.random_range(-1.0..1.0) / j as f64, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    GridField::from_fn(grid, |x| {
        let c = x.coords();
        modes.iter().map(|(k, a, th)| a * (2.0 * PI * (0..d).map(|i| k[i] * c[i]).sum::<f64>() + th).cos()).sum()
    })
}

fn default_sources(h: &BarrierMatrix, sources: &[usize]) -> Vec<usize> {
    if !sources.is_empty() {
        return sources.to_vec();
    }
    let mut out = aubry_set(h, AUBRY_TOL).nodes;
    let n = h.nodes();
    for k in 0..4 {
        let y = k * n / 4 + n / 8;
        if !out.contains(&y) {
            out.push(y);
        }
    }
    out
}

/// max |h_n(2i, 2j) − h_{n/2}(i, j)| over the given rows with even multi-indices.
fn coarse_grid_error(cfg: &ExperimentConfig, s: &Setup, h: &BarrierMatrix, rows: &[usize]) -> Result<f64> {
    let coarse = PeriodicGrid::new(s.grid.dim(), s.grid.n() / 2)?;
    let dt = cfg.solver.dt.map(|dt| 2.0 * dt).unwrap_or_else(|| crate::hj::default_dt(&coarse, &s.vset));
    let p = MatherPolytope::new(&s.model, coarse, &s.vset, dt)?;
    let c = -solve_mather_lp(&p)?.value;
    let hc = peierls_barrier(&s.model, coarse, c, &cfg.barrier, dt, &s.vset)?;
    let d = s.grid.dim();
    let to_coarse = |i: usize| -> Option<usize> {
        let m = s.grid.multi_index(i);
        m[..d].iter().all(|k| k % 2 == 0).then(|| {
            let half: Vec<usize> = m[..d].iter().map(|k| k / 2).collect();
            coarse.flat_index(&half)
        })
    };
    let mut tested: Vec<usize> = rows.iter().copied().filter(|&r| to_coarse(r).is_some()).collect();
    if tested.is_empty() {
        tested.push(0);
    }
    let mut err: f64 = 0.0;
    for &r in &tested {
        let rc = to_coarse(r).expect("even row");
        for j in 0..coarse.len() {
            let mut idx = coarse.multi_index(j);
            idx[..d].iter_mut().for_each(|k| *k *= 2);
            let jf = s.grid.flat_index(&idx[..d]);
            err = err.max((h.value(r, jf) - hc.value(rc, j)).abs());
        }
    }
    Ok(err)
}

fn operator_pipeline(cfg: &ExperimentConfig, res: &mut ExperimentResults) -> Result<()> {
    let mut s = setup(cfg, res)?;
    let (data, tol_min) = critical(cfg, res, &mut s)?;
    let h = barrier(cfg, res, &s, data.c)?;
    let p = polytope(res, &s, &data, tol_min)?;
    let sigma = sigma_field(&s)?;
    let sources = default_sources(&h, &cfg.suite.sources);
    res.metric("suite.sources", &sources);
    let grid_error = res.stage("grid_error", |res| {
        let e = coarse_grid_error(cfg, &s, &h, &aubry_set(&h, AUBRY_TOL).nodes)?;
        res.metric("grid_error", e);
        Ok(e)
    })?;
    let fp_tol = cfg.thresholds.fixed_point_factor * grid_error;
    res.metric("fixed_point_tol", fp_tol);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    res.stage("operator_pairs", |res| {
        let bound = cfg.thresholds.residual_constant * s.grid.spacing();
        let mut lip_worst = f64::NEG_INFINITY;
        let mut resid_worst: f64 = 0.0;
        let mut idem_worst: f64 = 0.0;
        let mut rows = Vec::new();
        for k in 0..cfg.suite.pairs {
            let phi1 = random_smooth_field(s.grid, &mut rng)?;
            let phi2 = random_smooth_field(s.grid, &mut rng)?;
            let lip = check_operator_lipschitz(&sigma, &phi1, &phi2, &h, &p)?;
            let image = apply_selection_operator(&sigma, &phi1, &h, &p)?;
            let resid = critical_residual(&s.model, &image.field, &s.vset, s.dt, data.c)?;
            let again = apply_selection_operator(&sigma, &image.field, &h, &p)?;
            let idem = again.field.sup_distance(&image.field);
            lip_worst = lip_worst.max(lip.lhs - lip.rhs);
            resid_worst = resid_worst.max(resid);
            idem_worst = idem_worst.max(idem);
            rows.push((k, lip, resid, idem));
        }
        res.file("operator_pairs.csv", |w| {
            use std::io::Write;
            writeln!(w, "pair,lhs,rhs,image_residual,idempotence")?;
            for (k, lip, r, i) in &rows {
                writeln!(w, "{k},{},{},{},{}", fmt(lip.lhs), fmt(lip.rhs), fmt(*r), fmt(*i))?;
            }
            Ok(())
        });
        res.metric("operator.lipschitz_excess", lip_worst);
        res.metric("operator.image_residual", resid_worst);
        res.metric("operator.idempotence", idem_worst);
        res.check("lipschitz", Check::at_most(lip_worst, crate::selection::LIPSCHITZ_SLACK));
        res.check("image_residual", Check::at_most(resid_worst, bound));
        res.check("idempotence", Check::at_most(idem_worst, 2.0 * fp_tol));
        Ok(())
    })?;
    res.stage("fixed_points", |res| {
        let mut worst: f64 = 0.0;
        let mut lines = Vec::new();
        for &y in &sources {
            let u = GridField::new(s.grid, h.row(y).to_vec())?;
            let fp = check_fixed_point(&sigma, &u, &h, &p, fp_tol)?;
            worst = worst.max(fp.distance);
            lines.push((y, fp.distance));
        }
        res.file("fixed_points.csv", |w| {
            use std::io::Write;
            writeln!(w, "source,distance")?;
            for (y, d) in &lines {
                writeln!(w, "{y},{}", fmt(*d))?;
            }
            Ok(())
        });
        res.metric("fixed_point.distance", worst);
        res.check("fixed_point", Check::at_most(worst, fp_tol));
        Ok(())
    })?;
    res.stage("comparison", |res| {
        let cands = candidate_solutions(&h, &sources, &cfg.suite.shifts);
        if cands.len() < 2 {
            return Err(Error::Config("comparison needs at least two candidate solutions".into()));
        }
        let mut failures = 0;
        let mut hypotheses = 0;
        let mut lines = Vec::new();
        for k in 0..cfg.suite.comparison_pairs {
            let i = rng.random_range(0..cands.len());
            let mut j = rng.random_range(0..cands.len() - 1);
            if j >= i {
                j += 1;
            }
            let v = measure_comparison(&cands[i], &cands[j], &sigma, &p, cfg.thresholds.comparison)?;
            failures += usize::from(!v.implication_holds);
            hypotheses += usize::from(v.hypothesis);
            lines.push((k, i, j, v));
        }
        res.file("comparison.csv", |w| {
            use std::io::Write;
            writeln!(w, "pair,u1,u2,min_integral,hypothesis,max_excess,conclusion")?;
            for (k, i, j, v) in &lines {
                writeln!(
                    w,
                    "{k},{i},{j},{},{},{},{}",
                    fmt(v.min_integral),
                    u8::from(v.hypothesis),
                    fmt(v.max_excess),
                    u8::from(v.conclusion)
                )?;
            }
            Ok(())
        });
        res.metric("comparison.candidates", cands.len());
        res.metric("comparison.hypotheses", hypotheses);
        res.check(
            "comparison",
            Check::flag(failures == 0, format!("{failures} of {} implications failed", cfg.suite.comparison_pairs)),
        );
        Ok(())
    })?;
    if let Some(x) = cfg.suite.query {
        res.stage("equilibrium", |res| {
            let zero = GridField::constant(s.grid, 0.0);
            let eq = equilibrium_measures(&zero, x, &h, &p)?;
            res.metric("equilibrium.value", eq.value);
            res.metric("equilibrium.multiplicity", eq.multiplicity);
            res.file("equilibrium_measure.csv", |w| eq.witness.write_csv(w));
            Ok(())
        })?;
    }
    Ok(())
}

fn occupation_pipeline(cfg: &ExperimentConfig, res: &mut ExperimentResults) -> Result<()> {
    let mut s = setup(cfg, res)?;
    let (data, _) = critical(cfg, res, &mut s)?;
    let mather = match &data.lp_measure {
        Some(mu) => mu.projected(),
        None => res.stage("mather_lp", |_| {
            let p = MatherPolytope::new(&s.model, s.grid, &s.vset, s.dt)?;
            Ok(solve_mather_lp(&p)?.measure.projected())
        })?,
    };
    let b = bracket(res, &s)?;
    let entries = sweep(cfg, res, &s, &b)?;
    let curve_dt = cfg.suite.curve_dt.unwrap_or(s.dt);
    res.metric("curve_dt", curve_dt);
    let start = crate::torus::TorusPoint::new(&cfg.suite.start)?;
    let bound = speed_bound(&s.model, &b, &s.grid, &s.vset);
    res.metric("speed_bound", bound);
    res.stage("occupation", |res| {
        let op = closedness_operator(&s.grid, &s.vset, curve_dt);
        let mut rows = Vec::new();
        for (k, e) in entries.iter().enumerate() {
            let Ok((u, _)) = &e.result else { continue };
            let lambda = e.lambda;
            let params = CurveParams { t_max: cfg.suite.curve_lambda_t / lambda, dt: curve_dt, solver_tol: s.solver.tol };
            let trace = backward_calibrated_curve(&s.model, lambda, u, start, &s.vset, &params)?;
            let cal = check_calibration(&trace, u, &s.model, lambda);
            let mu = occupation_measure(&trace, &s.grid, &s.vset, cfg.suite.tail_tol)?;
            let mass = check_mass_identity(&trace, lambda);
            let defect = closedness_defect(&mu, &op);
            let tv = tv_distance(&mu.projected(), &mather);
            let speed = speed_bound_check(&trace, &s.vset, bound);
            if let Some(diag) = &speed.diagnostic {
                res.warn(format!("λ = {lambda}: {diag}"));
            }
            res.file(format!("occupation_{k:02}.csv"), |w| mu.write_projected_csv(w));
            rows.push(json!({
                "lambda": lambda,
                "mass_identity": mass,
                "closedness_defect": defect,
                "tv_to_mather": tv,
                "calibration_max_defect": cal.max_defect,
                "calibration_telescoped": cal.telescoped,
                "max_speed": speed.max_speed,
            }));
            res.check(format!("mass_identity_{k:02}"), Check::at_most(mass, cfg.thresholds.mass_identity));
        }
        let get = |key: &str| -> Vec<f64> { rows.iter().map(|r| r[key].as_f64().unwrap_or(f64::NAN)).collect() };
        let lambdas = get("lambda");
        let defects = get("closedness_defect");
        let tvs = get("tv_to_mather");
        // least squares through the origin
        let fit = lambdas.iter().zip(&defects).map(|(l, d)| l * d).sum::<f64>() / lambdas.iter().map(|l| l * l).sum::<f64>();
        let worst = lambdas.iter().zip(&defects).map(|(l, d)| d / (2.0 * fit * l)).fold(0.0, f64::max);
        res.metric("closedness_fit", fit);
        res.metric("occupation", rows);
        res.check("closedness_linear", Check::at_most(worst, 1.0).with_detail("max defect / (2 C λ)"));
        res.check("tv_monotone", Check::flag(factor_two_monotone(&tvs), "TV to the Mather measure nonincreasing within factor 2"));
        Ok(())
    })
}

fn barrier_pipeline(cfg: &ExperimentConfig, res: &mut ExperimentResults) -> Result<()> {
    let mut s = setup(cfg, res)?;
    let (data, _) = critical(cfg, res, &mut s)?;
    let h = barrier(cfg, res, &s, data.c)?;
    res.stage("barrier_checks", |res| {
        let aubry = aubry_set(&h, cfg.suite.aubry_tol);
        res.metric("aubry_set", &aubry);
        if let Some(t) = cfg.thresholds.barrier_max_abs {
            res.check("barrier_max_abs", Check::at_most(h.max_abs(), t));
        }
        if aubry.fallback {
            res.warn("no diagonal entry of the barrier vanishes; the Aubry set is the diagonal argmin");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = h.nodes();
        let triples: Vec<(usize, usize, usize)> =
            (0..cfg.suite.triples).map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_range(0..n))).collect();
        let tri = h.triangle_defect(&triples);
        res.metric("triangle_defect", tri);
        res.check("triangle", Check::at_most(tri, cfg.thresholds.triangle));
        let sources = default_sources(&h, &cfg.suite.sources);
        let mut worst: f64 = 0.0;
        for &y in &sources {
            let u = GridField::new(s.grid, h.row(y).to_vec())?;
            worst = worst.max(critical_residual(&s.model, &u, &s.vset, s.dt, data.c)?);
        }
        res.metric("row_residual", worst);
        res.check("row_residual", Check::at_most(worst, cfg.thresholds.column_residual * s.grid.spacing()));
        if let Some(mu) = &data.lp_measure {
            let uniform = vec![1.0 / n as f64; n];
            let tv = tv_distance(&mu.projected(), &uniform);
            res.metric("lp.tv_uniform", tv);
            if let Some(t) = cfg.thresholds.tv_uniform {
                res.check("tv_uniform", Check::at_most(tv, t));
            }
        }
        Ok(())
    })
}

fn fmt(x: f64) -> String {
    crate::torus::fmt17(x)
}
