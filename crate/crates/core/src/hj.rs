//! Monotone semi-Lagrangian solver for H(x, Du, λu) + λV(x, λ) = c0 on T^d,
//! sub/supersolution brackets, residuals and the nonexistence certificate.
//!
//! The discrete operator is
//!
//! ```text
//! T[u](x) = min_v { dt (L(x, v, λ u(x)) − λ V(x, λ) + c0) + I[u](x − v dt) }
//! ```
//!
//! with `I` the periodic multilinear interpolant. It is iterated in Jacobi
//! fashion. Every few sweeps the iterate is shifted by the constant that
//! cancels the residual weighted by the stationary distribution of the
//! current minimizing transition kernel; this removes the slowly contracting
//! constant mode without changing the fixed point.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{ControlModel, ModelKind, VelocitySet};
use crate::torus::{GridField, PeriodicGrid, ShiftStencil, MAX_DIM};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 200_000;
pub const DEFAULT_CFL: f64 = 0.4;

/// Default time step 0.4·h/vmax.
pub fn default_dt(grid: &PeriodicGrid, vset: &VelocitySet) -> f64 {
    DEFAULT_CFL * grid.spacing() / vset.vmax()
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverParams {
    pub dt: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Sweeps between constant-mode corrections; 0 disables them.
    pub correction_every: usize,
    pub record_history: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { dt: None, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, correction_every: 16, record_history: false }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub lambda: f64,
    pub iterations: usize,
    pub final_residual: f64,
    /// Nodes where the bracket clamp is active at the final iterate.
    pub bracket_violations: usize,
    pub converged: bool,
    /// λ exceeded the bracket's λ0.
    pub above_lambda0: bool,
    #[serde(skip)]
    pub residual_history: Vec<f64>,
}

#[derive(Clone, Debug)]
enum UTerm {
    /// L(x,v,u) − L(x,v,0) = −σ_i u.
    Linear(Vec<f64>),
    /// L(x,v,u) − L(x,v,0) = −arctan u.
    Arctan,
    /// Non-separable: the full Lagrangian is evaluated per velocity.
    Full,
}

impl UTerm {
    #[inline]
    fn value(&self, i: usize, w: f64) -> f64 {
        match self {
            UTerm::Linear(s) => -s[i] * w,
            UTerm::Arctan => -w.atan(),
            UTerm::Full => 0.0,
        }
    }

    #[inline]
    fn derivative(&self, i: usize, w: f64) -> f64 {
        match self {
            UTerm::Linear(s) => -s[i],
            UTerm::Arctan => -1.0 / (1.0 + w * w),
            UTerm::Full => 0.0,
        }
    }
}

/// One discretization (grid, velocities, dt) of a fixed equation.
#[derive(Clone, Debug)]
pub struct SemiLagrangian<'a> {
    model: &'a ControlModel,
    grid: PeriodicGrid,
    vset: &'a VelocitySet,
    dt: f64,
    lambda: f64,
    stencil: ShiftStencil,
    // dt·L(x_i, v_s, 0), velocity-major
    cost0: Vec<f64>,
    uterm: UTerm,
    // dt·(c0 − λ V(x_i, λ))
    forcing: Vec<f64>,
}

/// Per-sweep outputs of the operator.
#[derive(Clone, Debug)]
pub struct Application {
    pub values: Vec<f64>,
    pub argmin: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub clamp_active: usize,
    pub history: Vec<f64>,
}

impl<'a> SemiLagrangian<'a> {
    fn build(
        model: &'a ControlModel,
        grid: PeriodicGrid,
        vset: &'a VelocitySet,
        dt: f64,
        lambda: f64,
        uterm: UTerm,
        forcing: Vec<f64>,
    ) -> Result<Self> {
        if model.dim() != grid.dim() || vset.dim() != grid.dim() {
            return Err(Error::Config(format!(
                "dimension mismatch: model {}, grid {}, velocities {}",
                model.dim(),
                grid.dim(),
                vset.dim()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
        }
        let shifts: Vec<[f64; MAX_DIM]> = vset.raw().iter().map(|v| [-v[0] * dt, -v[1] * dt]).collect();
        let stencil = ShiftStencil::new(grid, &shifts);
        let n = grid.len();
        let mut cost0 = Vec::with_capacity(vset.len() * n);
        for v in vset.iter() {
            for i in 0..n {
                let x = grid.coords(i);
                cost0.push(dt * model.lagrangian0(&x[..grid.dim()], v));
            }
        }
        Ok(Self { model, grid, vset, dt, lambda, stencil, cost0, uterm, forcing })
    }

    fn model_uterm(model: &ControlModel, grid: &PeriodicGrid) -> UTerm {
        match model.kind() {
            ModelKind::Mechanical { sigma, .. } => {
                UTerm::Linear(grid.nodes().map(|x| sigma.at(&x)).collect())
            }
            ModelKind::ShiftedQuadratic { .. } => UTerm::Linear(vec![1.0; grid.len()]),
            ModelKind::ArctanDiscount => UTerm::Arctan,
            ModelKind::Custom(_) => UTerm::Full,
        }
    }

    /// The scheme for H(x, Du, λu) + λV(x, λ) = c0.
    pub fn perturbed(
        model: &'a ControlModel,
        grid: PeriodicGrid,
        vset: &'a VelocitySet,
        dt: f64,
        lambda: f64,
    ) -> Result<Self> {
        let c0 = model.critical_value();
        let forcing = grid
            .nodes()
            .map(|x| dt * (c0 - lambda * model.potential_at(x.coords(), lambda)))
            .collect();
        Self::build(model, grid, vset, dt, lambda, Self::model_uterm(model, &grid), forcing)
    }

    /// The classical discounted scheme λw + H(x, Dw, 0) = 0.
    pub fn discounted(
        model: &'a ControlModel,
        grid: PeriodicGrid,
        vset: &'a VelocitySet,
        dt: f64,
        lambda: f64,
    ) -> Result<Self> {
        let n = grid.len();
        Self::build(model, grid, vset, dt, lambda, UTerm::Linear(vec![1.0; n]), vec![0.0; n])
    }

    /// The critical scheme H(x, Du, 0) = c.
    pub fn critical(model: &'a ControlModel, grid: PeriodicGrid, vset: &'a VelocitySet, dt: f64, c: f64) -> Result<Self> {
        let n = grid.len();
        Self::build(model, grid, vset, dt, 0.0, UTerm::Linear(vec![0.0; n]), vec![dt * c; n])
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn vset(&self) -> &VelocitySet {
        self.vset
    }

    pub fn model(&self) -> &ControlModel {
        self.model
    }

    /// One application of T.
    pub fn apply(&self, u: &[f64]) -> Application {
        let n = self.grid.len();
        let mut values = vec![0.0; n];
        let mut argmin = vec![0u32; n];
        self.apply_into(u, &mut values, &mut argmin);
        Application { values, argmin }
    }

    fn apply_into(&self, u: &[f64], out: &mut [f64], arg: &mut [u32]) {
        let lambda = self.lambda;
        match &self.uterm {
            UTerm::Full => {
                let n = self.grid.len();
                let d = self.grid.dim();
                let mut cost = vec![0.0; self.cost0.len()];
                for (s, v) in self.vset.iter().enumerate() {
                    for i in 0..n {
                        let x = self.grid.coords(i);
                        cost[s * n + i] = self.dt * self.model.lagrangian(&x[..d], v, lambda * u[i]);
                    }
                }
                self.stencil.min_plus(u, &cost, out, arg);
                for i in 0..n {
                    out[i] += self.forcing[i];
                }
            }
            term => {
                self.stencil.min_plus(u, &self.cost0, out, arg);
                for i in 0..out.len() {
                    out[i] += self.dt * term.value(i, lambda * u[i]) + self.forcing[i];
                }
            }
        }
    }

    /// sup |u − T[u]| / dt.
    pub fn residual(&self, u: &[f64]) -> f64 {
        let a = self.apply(u);
        sup_diff(&a.values, u) / self.dt
    }

    /// max (T[u] − u)/dt and max (u − T[u])/dt: positive parts measure
    /// the supersolution and subsolution defects respectively.
    pub fn one_sided_residuals(&self, u: &[f64]) -> (f64, f64) {
        let a = self.apply(u);
        let mut up: f64 = 0.0;
        let mut down: f64 = 0.0;
        for (t, v) in a.values.iter().zip(u) {
            up = up.max((t - v) / self.dt);
            down = down.max((v - t) / self.dt);
        }
        (up, down)
    }

    /// Cost of velocity `s` at node `i` given the current value u_i, without the
    /// interpolated term.
    pub fn running_cost(&self, s: usize, i: usize, ui: f64) -> f64 {
        let n = self.grid.len();
        match &self.uterm {
            UTerm::Full => {
                let x = self.grid.coords(i);
                self.dt * self.model.lagrangian(&x[..self.grid.dim()], self.vset.get(s), self.lambda * ui)
                    + self.forcing[i]
            }
            term => self.cost0[s * n + i] + self.dt * term.value(i, self.lambda * ui) + self.forcing[i],
        }
    }

    fn derivative(&self, i: usize, ui: f64, s: usize) -> f64 {
        match &self.uterm {
            UTerm::Full => {
                let x = self.grid.coords(i);
                let xc = &x[..self.grid.dim()];
                let v = self.vset.get(s);
                let w = self.lambda * ui;
                let h = 1e-6 * (1.0 + w.abs());
                (self.model.lagrangian(xc, v, w + h) - self.model.lagrangian(xc, v, w - h)) / (2.0 * h)
            }
            term => term.derivative(i, self.lambda * ui),
        }
    }

    fn uterm_delta(&self, i: usize, ui: f64, eps: f64, s: usize) -> f64 {
        let l = self.lambda;
        match &self.uterm {
            UTerm::Full => {
                let x = self.grid.coords(i);
                let xc = &x[..self.grid.dim()];
                let v = self.vset.get(s);
                self.model.lagrangian(xc, v, l * (ui + eps)) - self.model.lagrangian(xc, v, l * ui)
            }
            term => term.value(i, l * (ui + eps)) - term.value(i, l * ui),
        }
    }

    /// Constant c with Σ π_i (T[u + c]_i − u_i − c) = 0.
    fn constant_correction(&self, u: &[f64], tu: &[f64], arg: &[u32], pi: &[f64]) -> Option<f64> {
        if self.lambda == 0.0 {
            return None;
        }
        let dt = self.dt;
        let f = |eps: f64| -> f64 {
            u.iter()
                .enumerate()
                .map(|(i, &ui)| pi[i] * (tu[i] - ui + dt * self.uterm_delta(i, ui, eps, arg[i] as usize)))
                .sum()
        };
        let slope: f64 = u
            .iter()
            .enumerate()
            .map(|(i, &ui)| pi[i] * dt * self.lambda * self.derivative(i, ui, arg[i] as usize))
            .sum();
        if !(slope < 0.0) {
            return None;
        }
        let f0 = f(0.0);
        if f0 == 0.0 {
            return Some(0.0);
        }
        // f is decreasing; bracket the root starting from the Newton guess
        let guess = (-f0 / slope).abs().max(1e-300);
        let dir = if f0 > 0.0 { 1.0 } else { -1.0 };
        let (mut lo, mut hi) = (0.0f64, guess);
        let mut found = false;
        for _ in 0..200 {
            if f(dir * hi) * dir <= 0.0 {
                found = true;
                break;
            }
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return None;
            }
        }
        if !found {
            return None;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(dir * mid) * dir > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(dir * 0.5 * (lo + hi))
    }

    /// Jacobi iteration from `init`, optionally clamped to `[lo, hi]`.
    pub fn iterate(&self, init: &[f64], clamp: Option<(&[f64], &[f64])>, params: &SolverParams) -> FixedPoint {
        let n = self.grid.len();
        let clamp_into = |u: &mut [f64]| {
            if let Some((lo, hi)) = clamp {
                for i in 0..n {
                    u[i] = u[i].max(lo[i]).min(hi[i]);
                }
            }
        };
        let mut u = init.to_vec();
        clamp_into(&mut u);
        let mut tu = vec![0.0; n];
        let mut arg = vec![0u32; n];
        let mut pi = vec![1.0 / n as f64; n];
        let mut pi_next = vec![0.0; n];
        let mut history = Vec::new();
        let mut iterations = 0;
        let mut residual;
        loop {
            self.apply_into(&u, &mut tu, &mut arg);
            residual = sup_diff(&tu, &u) / self.dt;
            if params.record_history {
                history.push(residual);
            }
            if residual <= params.tol || iterations >= params.max_iter {
                break;
            }
            iterations += 1;
            let k = params.correction_every;
            let shift = if k > 0 && iterations % k == 0 {
                self.constant_correction(&u, &tu, &arg, &pi)
            } else {
                None
            };
            match shift {
                Some(c) => u.iter_mut().for_each(|v| *v += c),
                None => u.copy_from_slice(&tu),
            }
            clamp_into(&mut u);
            if k > 0 {
                self.stationary_step(&arg, &pi, &mut pi_next);
                std::mem::swap(&mut pi, &mut pi_next);
            }
        }
        let clamp_active = match clamp {
            Some((lo, hi)) => (0..n).filter(|&i| tu[i] < lo[i] - 1e-9 || tu[i] > hi[i] + 1e-9).count(),
            None => 0,
        };
        FixedPoint { values: u, iterations, residual, converged: residual <= params.tol, clamp_active, history }
    }

    // π ← π P for the transition kernel of the current minimizers
    fn stationary_step(&self, arg: &[u32], pi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (i, &s) in arg.iter().enumerate() {
            let c = self.stencil.corners(s as usize, i);
            for (k, w) in c.iter() {
                out[k] += pi[i] * w;
            }
        }
        let total: f64 = out.iter().sum();
        if total > 0.0 {
            out.iter_mut().for_each(|p| *p /= total);
        }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sub/supersolution bracket and the constants entering it.
#[derive(Clone, Debug, Serialize)]
pub struct Bracket {
    #[serde(skip)]
    pub lower: GridField,
    #[serde(skip)]
    pub upper: GridField,
    pub lambda0: f64,
    pub k0: f64,
    pub delta: f64,
    pub kappa: f64,
    pub t_bound: f64,
    pub c2: f64,
}

fn momentum_lattice(model: &ControlModel) -> Vec<[f64; MAX_DIM]> {
    let m = model.fenchel_samples();
    let pb = model.p_box();
    let step = 2.0 * pb / (m - 1) as f64;
    let axis: Vec<f64> = (0..m).map(|k| -pb + k as f64 * step).collect();
    match model.dim() {
        1 => axis.iter().map(|&p| [p, 0.0]).collect(),
        _ => axis.iter().flat_map(|&a| axis.iter().map(move |&b| [a, b])).collect(),
    }
}

/// Sampled λ values used for sup |V(·, λ)|.
const KAPPA_LAMBDAS: [f64; 4] = [0.0, 0.01, 0.05, 0.1];

/// û_± = û − max û ∓ 𝔎/δ, û − min û + 𝔎/δ together with λ0.
pub fn compute_bracket(model: &ControlModel, critical_solution: &GridField, vset: &VelocitySet) -> Result<Bracket> {
    let grid = *critical_solution.grid();
    let d = grid.dim();
    let c0 = model.critical_value();
    let ps = momentum_lattice(model);
    let mut k0: f64 = 0.0;
    for x in grid.nodes() {
        for p in &ps {
            if model.hamiltonian(x.coords(), &p[..d], 0.0) <= c0 {
                k0 = k0.max(crate::models::norm2(&p[..d]).sqrt());
            }
        }
    }
    let mut delta = f64::INFINITY;
    for x in grid.nodes() {
        for p in &ps {
            if crate::models::norm2(&p[..d]).sqrt() <= k0 {
                delta = delta.min(model.dh_du0(x.coords(), &p[..d]));
            }
        }
    }
    if !(delta > 0.0) {
        return Err(Error::Model(format!("dH/du(x,p,0) has nonpositive lower bound {delta} on the critical sublevel set")));
    }
    let mut sup_v: f64 = 0.0;
    for x in grid.nodes() {
        for &l in &KAPPA_LAMBDAS {
            sup_v = sup_v.max(model.potential_at(x.coords(), l).abs());
        }
    }
    let kappa = 1.0 + sup_v;
    let t_bound = k0 * grid.diameter() + kappa / delta;
    let c2 = second_order_remainder(model, &grid, vset, 0.1 * t_bound);
    let lambda0 = if c2 > 0.0 { 0.1f64.min(delta / (2.0 * t_bound * c2)) } else { 0.1 };
    let shift = kappa / delta;
    let (mx, mn) = (critical_solution.max(), critical_solution.min());
    let lower = critical_solution.map(|v| v - mx - shift);
    let upper = critical_solution.map(|v| v - mn + shift);
    Ok(Bracket { lower, upper, lambda0, k0, delta, kappa, t_bound, c2 })
}

// sup |L(x,v,w) − L(x,v,0) − w ∂L/∂u(x,v,0)| / w² over 0 < |w| ≤ range
fn second_order_remainder(model: &ControlModel, grid: &PeriodicGrid, vset: &VelocitySet, range: f64) -> f64 {
    let d = grid.dim();
    let ws: Vec<f64> = (1..=8).flat_map(|k| {
        let w = range * k as f64 / 8.0;
        [w, -w]
    })
    .collect();
    let mut c2: f64 = 0.0;
    for x in grid.nodes() {
        let xc = &x.coords()[..d];
        for v in vset.iter() {
            let l0 = model.lagrangian(xc, v, 0.0);
            let dl = model.dl_du0(xc, v);
            for &w in &ws {
                let r = (model.lagrangian(xc, v, w) - l0 - w * dl).abs() / (w * w);
                // rounding floor for linear models
                if r * w * w > 1e-12 * (1.0 + l0.abs() + w.abs()) {
                    c2 = c2.max(r);
                }
            }
        }
    }
    c2
}

/// Approximate solution of the critical equation H(x, Du, 0) = c0 by relative
/// value iteration, normalized to minimum 0.
pub fn critical_solution(
    model: &ControlModel,
    grid: PeriodicGrid,
    vset: &VelocitySet,
    dt: f64,
    max_iter: usize,
) -> Result<GridField> {
    let scheme = SemiLagrangian::critical(model, grid, vset, dt, model.critical_value())?;
    let n = grid.len();
    let mut u = vec![0.0; n];
    for _ in 0..max_iter {
        let a = scheme.apply(&u);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let r = a.values[i] - u[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let m = a.values.iter().copied().fold(f64::INFINITY, f64::min);
        u = a.values.iter().map(|v| v - m).collect();
        if hi - lo <= 1e-10 * dt {
            break;
        }
    }
    GridField::new(grid, u)
}

/// Solves the perturbed equation, starting from the bracket midpoint or `warm_start`.
pub fn solve_perturbed(
    model: &ControlModel,
    grid: PeriodicGrid,
    lambda: f64,
    vset: &VelocitySet,
    bracket: &Bracket,
    params: &SolverParams,
    warm_start: Option<&GridField>,
) -> Result<(GridField, SolveReport)> {
    if !(lambda > 0.0) {
        return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
    }
    let dt = params.dt.unwrap_or_else(|| default_dt(&grid, vset));
    let scheme = SemiLagrangian::perturbed(model, grid, vset, dt, lambda)?;
    let (lo, hi) = (bracket.lower.values(), bracket.upper.values());
    let init: Vec<f64> = match warm_start {
        Some(w) => w.values().to_vec(),
        None => lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
    };
    let fp = scheme.iterate(&init, Some((lo, hi)), params);
    let report = SolveReport {
        lambda,
        iterations: fp.iterations,
        final_residual: fp.residual,
        bracket_violations: fp.clamp_active,
        converged: fp.converged,
        above_lambda0: lambda > bracket.lambda0,
        residual_history: fp.history,
    };
    Ok((GridField::from_vec_unchecked(grid, fp.values), report))
}

/// sup |u − T[u]| / dt for the perturbed scheme.
pub fn residual(model: &ControlModel, lambda: f64, u: &GridField, vset: &VelocitySet, dt: f64) -> Result<f64> {
    let scheme = SemiLagrangian::perturbed(model, *u.grid(), vset, dt, lambda)?;
    Ok(scheme.residual(u.values()))
}

/// True iff inf_x [inf_u H(x, 0, u) + λ V(x, λ)] > c0 + margin on a fine sampling of the torus.
pub fn nonexistence_certificate(model: &ControlModel, lambda: f64) -> bool {
    let n = if model.dim() == 1 { 512 } else { 64 };
    let grid = PeriodicGrid::new(model.dim(), n).expect("valid sampling grid");
    let zero = [0.0; MAX_DIM];
    let inf = grid
        .nodes()
        .map(|x| model.inf_h_over_u(x.coords(), &zero[..model.dim()]) + lambda * model.potential_at(x.coords(), lambda))
        .fold(f64::INFINITY, f64::min);
    let c0 = model.critical_value();
    inf > c0 + 1e-9 * (1.0 + c0.abs())
}

#[derive(Debug)]
pub struct SweepEntry {
    pub lambda: f64,
    pub result: Result<(GridField, SolveReport)>,
}

/// Solves along a strictly descending λ schedule, warm-starting each solve
/// from the previous field.
pub fn lambda_sweep(
    model: &ControlModel,
    grid: PeriodicGrid,
    lambdas: &[f64],
    vset: &VelocitySet,
    bracket: &Bracket,
    params: &SolverParams,
) -> Result<Vec<SweepEntry>> {
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("lambda schedule must be strictly descending".into()));
    }
    let mut out = Vec::with_capacity(lambdas.len());
    let mut prev: Option<GridField> = None;
    for &lambda in lambdas {
        let result = solve_perturbed(model, grid, lambda, vset, bracket, params, prev.as_ref());
        if let Ok((f, _)) = &result {
            prev = Some(f.clone());
        }
        out.push(SweepEntry { lambda, result });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{builtin_model, velocity_set, ModelParams};

    fn mech(u: &str) -> ControlModel {
        builtin_model("mechanical", &ModelParams { potential_u: Some(u.parse().unwrap()), ..Default::default() })
            .unwrap()
    }

    #[test]
    fn free_particle_zero_is_fixed() {
        let m = mech("0");
        let g = PeriodicGrid::new(1, 32).unwrap();
        let vs = velocity_set(2.0, 9, 1).unwrap();
        let dt = default_dt(&g, &vs);
        let crit = critical_solution(&m, g, &vs, dt, 1000).unwrap();
        let b = compute_bracket(&m, &crit, &vs).unwrap();
        assert_eq!(b.kappa, 1.0);
        let (u, rep) = solve_perturbed(&m, g, 0.05, &vs, &b, &SolverParams::default(), None).unwrap();
        assert!(rep.converged);
        assert_eq!(u.max(), 0.0);
        assert_eq!(u.min(), 0.0);
    }

    #[test]
    fn bracket_for_cosine_potential() {
        let m = mech("cos(1)");
        let g = PeriodicGrid::new(1, 64).unwrap();
        let vs = velocity_set(3.0, 33, 1).unwrap();
        let dt = default_dt(&g, &vs);
        let crit = critical_solution(&m, g, &vs, dt, 50_000).unwrap();
        let b = compute_bracket(&m, &crit, &vs).unwrap();
        assert_eq!(b.delta, 1.0);
        assert_eq!(b.kappa, 1.0);
        assert_eq!(b.lambda0, 0.1);
        for i in 0..g.len() {
            assert!(b.lower.value(i) <= crit.value(i) - 1.0);
            assert!(b.upper.value(i) >= crit.value(i) + 1.0);
        }
    }

    #[test]
    fn arctan_certificate() {
        let m = builtin_model("arctan_discount", &ModelParams::default()).unwrap();
        assert!(nonexistence_certificate(&m, 2.0));
        assert!(!nonexistence_certificate(&m, 0.5));
        assert!(!nonexistence_certificate(&mech("cos(1)"), 3.0));
    }

    #[test]
    fn constant_shift_residual_is_lambda_eps() {
        let m = mech("cos(1)");
        let g = PeriodicGrid::new(1, 32).unwrap();
        let vs = velocity_set(3.0, 17, 1).unwrap();
        let dt = default_dt(&g, &vs);
        let crit = critical_solution(&m, g, &vs, dt, 20_000).unwrap();
        let b = compute_bracket(&m, &crit, &vs).unwrap();
        let lambda = 0.05;
        let (u, rep) = solve_perturbed(&m, g, lambda, &vs, &b, &SolverParams::default(), None).unwrap();
        assert!(rep.converged, "{rep:?}");
        let eps = 0.01;
        let r = residual(&m, lambda, &u.shifted(eps), &vs, dt).unwrap();
        assert!((r - lambda * eps).abs() < 1e-6, "{r}");
    }
}
