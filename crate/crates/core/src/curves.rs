//! Backward calibrated curves of the discrete perturbed equation and their
//! discounted occupation measures.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hj::Bracket;
use crate::mather::DiscreteMeasure;
use crate::models::{ControlModel, VelocitySet};
use crate::torus::{fmt17, GridField, PeriodicGrid, TorusPoint, MAX_DIM};

/// A discrete backward characteristic ξ₀ = x, ξ₋₁, … with its discount weights.
#[derive(Clone, Debug)]
pub struct CurveTrace {
    pub dt: f64,
    pub lambda: f64,
    /// ξ₀, ξ₋₁, …; one more point than steps.
    pub points: Vec<TorusPoint>,
    /// Lattice index of the velocity chosen at each step.
    pub velocity_index: Vec<usize>,
    pub velocities: Vec<[f64; MAX_DIM]>,
    /// W_k = exp(λ Σ_{j<k} ∂L/∂u(ξ_j, v_j, 0) dt); W₀ = 1.
    pub weights: Vec<f64>,
    /// ∂L/∂u(ξ_k, v_k, 0) per step.
    pub dl_du: Vec<f64>,
    /// |u(ξ_k) − u(ξ_k − v_k dt) − running cost| per step.
    pub defects: Vec<f64>,
    pub horizon: f64,
}

impl CurveTrace {
    pub fn steps(&self) -> usize {
        self.velocities.len()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn max_speed(&self) -> f64 {
        let d = self.dim();
        self.velocities.iter().map(|v| v[..d].iter().map(|c| c * c).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// Rows `step,time,coords…,velocity…,weight,defect`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.dim();
        let axes = |p: &str| (0..d).map(|a| format!("{p}{a}")).collect::<Vec<_>>().join(",");
        writeln!(w, "step,time,{},{},weight,defect", axes("x"), axes("v"))?;
        for k in 0..self.steps() {
            let x: Vec<String> = self.points[k].coords().iter().map(|c| fmt17(*c)).collect();
            let v: Vec<String> = self.velocities[k][..d].iter().map(|c| fmt17(*c)).collect();
            writeln!(
                w,
                "{k},{},{},{},{},{}",
                fmt17(-(k as f64) * self.dt),
                x.join(","),
                v.join(","),
                fmt17(self.weights[k]),
                fmt17(self.defects[k])
            )?;
        }
        Ok(())
    }
}

fn running_cost(model: &ControlModel, lambda: f64, y: &TorusPoint, v: &[f64], uy: f64, dt: f64) -> f64 {
    let x = y.coords();
    dt * (model.lagrangian(x, v, lambda * uy) - lambda * model.potential_at(x, lambda) + model.critical_value())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CurveParams {
    pub t_max: f64,
    pub dt: f64,
    /// Residual tolerance the field was solved to.
    pub solver_tol: f64,
}

/// Allowed per-step calibration defect: 10·tol·dt plus the interpolation error bound max|Δ²u|/4.
pub fn calibration_threshold(u: &GridField, solver_tol: f64, dt: f64) -> f64 {
    10.0 * solver_tol * dt + 0.25 * u.max_second_difference()
}

/// Follows the minimizing velocity backwards from `x` for `t_max`.
pub fn backward_calibrated_curve(
    model: &ControlModel,
    lambda: f64,
    u: &GridField,
    x: TorusPoint,
    vset: &VelocitySet,
    params: &CurveParams,
) -> Result<CurveTrace> {
    let dt = params.dt;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if x.dim() != u.grid().dim() || vset.dim() != x.dim() || model.dim() != x.dim() {
        return Err(Error::Config("dimension mismatch between point, field, velocities and model".into()));
    }
    let steps = if params.t_max < dt { 0 } else { (params.t_max / dt).round() as usize };
    let d = x.dim();
    let mut points = Vec::with_capacity(steps + 1);
    let mut velocity_index = Vec::with_capacity(steps);
    let mut velocities = Vec::with_capacity(steps);
    let mut weights = Vec::with_capacity(steps);
    let mut dl_du = Vec::with_capacity(steps);
    let mut defects = Vec::with_capacity(steps);
    let mut y = x;
    let mut log_w: f64 = 0.0;
    points.push(y);
    for _ in 0..steps {
        let uy = u.interpolate(&y);
        let mut best = f64::INFINITY;
        let mut arg = 0;
        let mut best_cost = 0.0;
        let mut best_foot = y;
        for (j, v) in vset.iter().enumerate() {
            let delta = [-v[0] * dt, if d > 1 { -v[1] * dt } else { 0.0 }];
            let foot = y.translate(&delta);
            let cost = running_cost(model, lambda, &y, v, uy, dt);
            let val = cost + u.interpolate(&foot);
            if val < best {
                best = val;
                arg = j;
                best_cost = cost;
                best_foot = foot;
            }
        }
        let v = vset.get(arg);
        let mut vv = [0.0; MAX_DIM];
        vv[..d].copy_from_slice(v);
        let g = model.dl_du0(y.coords(), v);
        weights.push(log_w.exp());
        log_w += lambda * g * dt;
        dl_du.push(g);
        defects.push((uy - u.interpolate(&best_foot) - best_cost).abs());
        velocity_index.push(arg);
        velocities.push(vv);
        y = best_foot;
        points.push(y);
    }
    let threshold = calibration_threshold(u, params.solver_tol, dt);
    let bad = defects.iter().filter(|&&e| e > threshold).count();
    if steps > 0 && bad as f64 >= 0.05 * steps as f64 {
        return Err(Error::Curve(format!(
            "field not converged: calibration defect above {threshold:.3e} on {bad} of {steps} steps"
        )));
    }
    Ok(CurveTrace {
        dt,
        lambda,
        points,
        velocity_index,
        velocities,
        weights,
        dl_du,
        defects,
        horizon: steps as f64 * dt,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CalibrationReport {
    /// max over steps of the defect divided by dt.
    pub max_defect: f64,
    /// |u(ξ₀) − u(ξ_K) − Σ running costs|.
    pub telescoped: f64,
}

/// Recomputes the calibration defects of `trace` against `u`.
pub fn check_calibration(trace: &CurveTrace, u: &GridField, model: &ControlModel, lambda: f64) -> CalibrationReport {
    let dt = trace.dt;
    let d = trace.dim();
    let mut max_defect: f64 = 0.0;
    let mut total_cost = 0.0;
    for k in 0..trace.steps() {
        let y = &trace.points[k];
        let uy = u.interpolate(y);
        let cost = running_cost(model, lambda, y, &trace.velocities[k][..d], uy, dt);
        total_cost += cost;
        let defect = (uy - u.interpolate(&trace.points[k + 1]) - cost).abs();
        max_defect = max_defect.max(defect / dt);
    }
    let telescoped = match trace.points.last() {
        Some(last) if trace.steps() > 0 => (u.interpolate(&trace.points[0]) - u.interpolate(last) - total_cost).abs(),
        _ => 0.0,
    };
    CalibrationReport { max_defect, telescoped }
}

pub const DEFAULT_TAIL_TOL: f64 = 1e-4;

/// Estimated share of the discounted mass beyond the horizon.
pub fn tail_fraction(trace: &CurveTrace) -> f64 {
    if trace.steps() == 0 {
        return 1.0;
    }
    let total: f64 = trace.weights.iter().sum::<f64>() * trace.dt;
    let slowest = trace.dl_du.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(slowest < 0.0) || trace.lambda <= 0.0 {
        return 1.0;
    }
    let last = trace.weights[trace.steps() - 1] * (trace.lambda * slowest * trace.dt).exp();
    let tail = last / (trace.lambda * -slowest);
    tail / (total + tail)
}

/// Discounted occupation measure, normalized to mass 1.
pub fn occupation_measure(trace: &CurveTrace, grid: &PeriodicGrid, vset: &VelocitySet, tail_tol: f64) -> Result<DiscreteMeasure> {
    let tail = tail_fraction(trace);
    if tail > tail_tol {
        return Err(Error::Curve(format!(
            "discarded tail mass {tail:.3e} exceeds {tail_tol:.1e}; extend Tmax beyond {}",
            trace.horizon
        )));
    }
    let nv = vset.len();
    let mut w = vec![0.0; grid.len() * nv];
    for k in 0..trace.steps() {
        let mass = trace.weights[k] * trace.dt;
        for (node, c) in grid.interpolation_weights(&trace.points[k]).iter() {
            w[node * nv + trace.velocity_index[k]] += mass * c;
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    DiscreteMeasure::new(*grid, vset.clone(), w)
}

/// |lhs − rhs| / |rhs| for ∫ ∂L/∂u dμ = −λ⁻¹ (Σ W_k dt)⁻¹.
pub fn check_mass_identity(trace: &CurveTrace, lambda: f64) -> f64 {
    let total: f64 = trace.weights.iter().sum::<f64>() * trace.dt;
    let lhs = trace.dl_du.iter().zip(&trace.weights).map(|(g, w)| g * w).sum::<f64>() * trace.dt / total;
    let rhs = -1.0 / (lambda * total);
    (lhs - rhs).abs() / rhs.abs()
}

/// Σ (L⁰(ξ_k, v_k) + c0) W_k / Σ W_k.
pub fn occupation_action(trace: &CurveTrace, model: &ControlModel) -> f64 {
    let d = trace.dim();
    let c0 = model.critical_value();
    let total: f64 = trace.weights.iter().sum();
    (0..trace.steps())
        .map(|k| (model.lagrangian0(trace.points[k].coords(), &trace.velocities[k][..d]) + c0) * trace.weights[k])
        .sum::<f64>()
        / total
}

/// 𝔅 = C₀ + λ₀(𝔎 − 1) − c0 with C₀ = max over lattice of (𝔇₀ + 1)|v| − L(x, v, λ₀𝔇₀) and 𝔇₀ = T.
pub fn speed_bound(model: &ControlModel, bracket: &Bracket, grid: &PeriodicGrid, vset: &VelocitySet) -> f64 {
    let d0 = bracket.t_bound;
    let l0 = bracket.lambda0;
    let d = grid.dim();
    let mut c0: f64 = f64::NEG_INFINITY;
    for x in grid.nodes() {
        for v in vset.iter() {
            let speed = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            c0 = c0.max((d0 + 1.0) * speed - model.lagrangian(&x.coords()[..d], v, l0 * d0));
        }
    }
    c0 + l0 * (bracket.kappa - 1.0) - model.critical_value()
}

#[derive(Clone, Debug, Serialize)]
pub struct SpeedReport {
    pub pass: bool,
    pub max_speed: f64,
    pub bound: f64,
    pub vmax: f64,
    pub diagnostic: Option<String>,
}

/// Speeds within the lattice and below `bound`, with no velocity on the lattice boundary.
pub fn speed_bound_check(trace: &CurveTrace, vset: &VelocitySet, bound: f64) -> SpeedReport {
    let max_speed = trace.max_speed();
    let saturated = trace.velocity_index.iter().any(|&j| vset.on_boundary(j));
    let within = max_speed <= vset.vmax() * (1.0 + 1e-12) * (vset.dim() as f64).sqrt() && max_speed <= bound;
    let diagnostic = if saturated {
        Some("velocity lattice truncates the argmin".to_string())
    } else if !within {
        Some(format!("speed {max_speed:.4} exceeds the bound {bound:.4}"))
    } else {
        None
    };
    SpeedReport { pass: within && !saturated, max_speed, bound, vmax: vset.vmax(), diagnostic }
}
