//! Discrete closed measures, Mather measures by linear programming, and
//! linear-fractional minimization over the Mather face.
//!
//! Variables are weights on (node, velocity) pairs, flattened as
//! `node * |V| + velocity`. A weight on `(x, v)` transports mass from `x` to
//! the foot point `x − v·dt`, spread onto nodes by interpolation weights; a
//! measure is closed when every node receives exactly the mass it emits.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{ControlModel, VelocitySet};
use crate::simplex::{LinearProgram, LpSolution};
use crate::torus::{fmt17, PeriodicGrid, ShiftStencil, MAX_DIM};

/// Nonnegative weights on (node, velocity) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    grid: PeriodicGrid,
    vset: VelocitySet,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(grid: PeriodicGrid, vset: VelocitySet, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() * vset.len() {
            return Err(Error::Domain(format!(
                "measure has {} weights, expected {}",
                weights.len(),
                grid.len() * vset.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Domain(format!("measure weight {w} is not a finite nonnegative number")));
        }
        Ok(Self { grid, vset, weights })
    }

    pub fn dirac(grid: PeriodicGrid, vset: VelocitySet, node: usize, velocity: usize) -> Self {
        let mut weights = vec![0.0; grid.len() * vset.len()];
        weights[node * vset.len() + velocity] = 1.0;
        Self { grid, vset, weights }
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn vset(&self) -> &VelocitySet {
        &self.vset
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, node: usize, velocity: usize) -> f64 {
        self.weights[node * self.vset.len() + velocity]
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn normalized(&self) -> Self {
        let m = self.mass();
        let mut out = self.clone();
        if m > 0.0 {
            out.weights.iter_mut().for_each(|w| *w /= m);
        }
        out
    }

    /// Σ_k weight_k · f_k.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, f)| w * f).sum()
    }

    pub fn projected(&self) -> Vec<f64> {
        projected_measure(self)
    }

    /// Rows `node,velocity,weight` for every nonzero weight.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "node,velocity,weight")?;
        let nv = self.vset.len();
        for (k, &x) in self.weights.iter().enumerate() {
            if x != 0.0 {
                writeln!(w, "{},{},{}", k / nv, k % nv, fmt17(x))?;
            }
        }
        Ok(())
    }

    pub fn write_projected_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "node,weight")?;
        for (i, x) in self.projected().iter().enumerate() {
            writeln!(w, "{i},{}", fmt17(*x))?;
        }
        Ok(())
    }
}

/// Node weights Σ_v μ(node, v).
pub fn projected_measure(mu: &DiscreteMeasure) -> Vec<f64> {
    mu.weights.chunks(mu.vset.len()).map(|c| c.iter().sum()).collect()
}

/// Half the ℓ¹ distance between two node-weight vectors.
pub fn tv_distance(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Sparse matrix sending weights to per-node mass defects.
#[derive(Clone, Debug)]
pub struct ClosednessOperator {
    nodes: usize,
    col_start: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
}

pub fn closedness_operator(grid: &PeriodicGrid, vset: &VelocitySet, dt: f64) -> ClosednessOperator {
    let shifts: Vec<[f64; MAX_DIM]> = vset.raw().iter().map(|v| [-v[0] * dt, -v[1] * dt]).collect();
    let stencil = ShiftStencil::new(*grid, &shifts);
    let n = grid.len();
    let mut col_start = vec![0];
    let mut rows = Vec::new();
    let mut vals = Vec::new();
    for i in 0..n {
        for s in 0..vset.len() {
            let start = rows.len();
            let mut push = |r: usize, v: f64| {
                if let Some(k) = rows[start..].iter().position(|&q: &u32| q as usize == r) {
                    vals[start + k] += v;
                } else {
                    rows.push(r as u32);
                    vals.push(v);
                }
            };
            for (k, w) in stencil.corners(s, i).iter() {
                if w != 0.0 {
                    push(k, w);
                }
            }
            push(i, -1.0);
            // drop exact cancellations (stationary columns)
            let mut k = start;
            while k < rows.len() {
                if vals[k] == 0.0 {
                    rows.remove(k);
                    vals.remove(k);
                } else {
                    k += 1;
                }
            }
            col_start.push(rows.len());
        }
    }
    ClosednessOperator { nodes: n, col_start, rows, vals }
}

impl ClosednessOperator {
    pub fn rows(&self) -> usize {
        self.nodes
    }

    pub fn cols(&self) -> usize {
        self.col_start.len() - 1
    }

    pub fn column(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.col_start[k], self.col_start[k + 1]);
        self.rows[a..b].iter().map(|&r| r as usize).zip(self.vals[a..b].iter().copied())
    }

    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes];
        for (k, &x) in w.iter().enumerate() {
            if x != 0.0 {
                for (r, a) in self.column(k) {
                    out[r] += a * x;
                }
            }
        }
        out
    }

    /// Largest absolute row of the operator applied to `w`.
    pub fn max_defect(&self, w: &[f64]) -> f64 {
        self.apply(w).iter().fold(0.0, |a, r| a.max(r.abs()))
    }
}

/// max_row |C μ|.
pub fn closedness_defect(mu: &DiscreteMeasure, op: &ClosednessOperator) -> f64 {
    op.max_defect(mu.weights())
}

/// Sign of the denominator in [`fractional_minimize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DenominatorSign {
    Positive,
    Negative,
}

#[derive(Clone, Debug)]
pub struct LpOutcome {
    pub measure: DiscreteMeasure,
    pub value: f64,
    /// Some zero-reduced-cost nonbasic column can enter with a positive step.
    pub alternative_optima: bool,
    pub iterations: usize,
}

/// Closed-measure polytope with its action row and, once known, the minimality constraint.
#[derive(Clone, Debug)]
pub struct MatherPolytope {
    grid: PeriodicGrid,
    vset: VelocitySet,
    dt: f64,
    closedness: ClosednessOperator,
    action: Vec<f64>,
    critical: Option<f64>,
    tol_min: f64,
}

pub const DEFAULT_TOL_MIN_FLOOR: f64 = 1e-8;
const RC_TOL: f64 = 1e-9;
const STEP_TOL: f64 = 1e-9;

impl MatherPolytope {
    pub fn new(model: &ControlModel, grid: PeriodicGrid, vset: &VelocitySet, dt: f64) -> Result<Self> {
        if model.dim() != grid.dim() || vset.dim() != grid.dim() {
            return Err(Error::Config("dimension mismatch between model, grid and velocities".into()));
        }
        let closedness = closedness_operator(&grid, vset, dt);
        let d = grid.dim();
        let mut action = Vec::with_capacity(grid.len() * vset.len());
        for x in grid.nodes() {
            for v in vset.iter() {
                action.push(model.lagrangian0(&x.coords()[..d], v));
            }
        }
        Ok(Self { grid, vset: vset.clone(), dt, closedness, action, critical: None, tol_min: DEFAULT_TOL_MIN_FLOOR })
    }

    /// Builds the polytope, solves the Mather LP and installs the minimality constraint.
    pub fn build(
        model: &ControlModel,
        grid: PeriodicGrid,
        vset: &VelocitySet,
        dt: f64,
        tol_min: f64,
    ) -> Result<(Self, LpOutcome)> {
        let p = Self::new(model, grid, vset, dt)?;
        let out = solve_mather_lp(&p)?;
        Ok((p.with_minimality(-out.value, tol_min), out))
    }

    pub fn with_minimality(mut self, c: f64, tol_min: f64) -> Self {
        self.critical = Some(c);
        self.tol_min = tol_min.max(DEFAULT_TOL_MIN_FLOOR);
        self
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn vset(&self) -> &VelocitySet {
        &self.vset
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn closedness(&self) -> &ClosednessOperator {
        &self.closedness
    }

    pub fn action(&self) -> &[f64] {
        &self.action
    }

    pub fn critical_value(&self) -> Option<f64> {
        self.critical
    }

    pub fn tol_min(&self) -> f64 {
        self.tol_min
    }

    pub fn variables(&self) -> usize {
        self.action.len()
    }

    /// Node of variable `k`.
    pub fn node_of(&self, k: usize) -> usize {
        k / self.vset.len()
    }

    /// Lifts a node field to variables.
    pub fn lift(&self, f: &[f64]) -> Vec<f64> {
        let nv = self.vset.len();
        (0..self.variables()).map(|k| f[k / nv]).collect()
    }

    fn require_critical(&self) -> Result<f64> {
        self.critical
            .ok_or_else(|| Error::Config("polytope has no minimality constraint; solve the Mather LP first".into()))
    }

    fn measure_from(&self, x: &[f64]) -> Result<DiscreteMeasure> {
        DiscreteMeasure::new(self.grid, self.vset.clone(), x[..self.variables()].to_vec())
    }

    // closedness rows except the last (implied by the others)
    fn add_closedness(&self, k: usize, entries: &mut Vec<(usize, f64)>) {
        let last = self.grid.len() - 1;
        for (r, a) in self.closedness.column(k) {
            if r != last {
                entries.push((r, a));
            }
        }
    }

    /// min Σ w·cost over closed probability measures, with the minimality row if requested.
    fn linear_lp(&self, cost: &[f64], minimality: Option<f64>) -> LinearProgram {
        let n = self.grid.len();
        let mass_row = n - 1;
        let mut rhs = vec![0.0; n];
        rhs[mass_row] = 1.0;
        if let Some(c) = minimality {
            rhs.push(-c + self.tol_min);
        }
        let mut lp = LinearProgram::new(rhs);
        let mut entries = Vec::with_capacity(8);
        for k in 0..self.variables() {
            entries.clear();
            self.add_closedness(k, &mut entries);
            entries.push((mass_row, 1.0));
            if minimality.is_some() {
                entries.push((n, self.action[k]));
            }
            lp.add_column(cost[k], &entries);
        }
        if minimality.is_some() {
            lp.add_column(0.0, &[(n, 1.0)]);
        }
        lp
    }

    fn outcome(&self, lp: &LinearProgram, sol: &LpSolution, value: f64, x: &[f64]) -> Result<LpOutcome> {
        Ok(LpOutcome {
            measure: self.measure_from(x)?,
            value,
            alternative_optima: lp.has_alternative_optimum(sol, RC_TOL, STEP_TOL),
            iterations: sol.iterations,
        })
    }

    /// min Σ w·cost over all closed probability measures (no minimality constraint).
    pub fn minimize_over_closed(&self, cost: &[f64]) -> Result<LpOutcome> {
        self.check_len(cost)?;
        let lp = self.linear_lp(cost, None);
        let sol = lp.solve().map_err(rank_defect)?;
        self.outcome(&lp, &sol, sol.objective, &sol.x)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.variables() {
            return Err(Error::Domain(format!("vector has {} entries, polytope has {} variables", v.len(), self.variables())));
        }
        Ok(())
    }
}

fn rank_defect(e: Error) -> Error {
    match e {
        Error::Infeasible(msg) => Error::Infeasible(format!("closed-measure polytope is empty ({msg}); closedness operator rank defect")),
        other => other,
    }
}

/// Minimizes Σ w·L⁰ over closed probability measures; −value is the LP critical value.
pub fn solve_mather_lp(polytope: &MatherPolytope) -> Result<LpOutcome> {
    polytope.minimize_over_closed(&polytope.action)
}

/// Minimizes Σ w·cost over the Mather face {closed, mass 1, Σ w·L⁰ ≤ −c + tol_min}.
pub fn minimize_linear_over_mather(polytope: &MatherPolytope, cost: &[f64]) -> Result<LpOutcome> {
    polytope.check_len(cost)?;
    let c = polytope.require_critical()?;
    let lp = polytope.linear_lp(cost, Some(c));
    let sol = lp.solve().map_err(|e| match e {
        Error::Infeasible(msg) => Error::Infeasible(format!(
            "Mather face empty at tol_min = {:.3e} ({msg}); increase tol_min",
            polytope.tol_min
        )),
        other => other,
    })?;
    polytope.outcome(&lp, &sol, sol.objective, &sol.x)
}

/// Minimizes (Σ w·a)/(Σ w·b) over the Mather face with the Charnes–Cooper
/// substitution ν = w/|Σ w·b|.
pub fn fractional_minimize(
    polytope: &MatherPolytope,
    a: &[f64],
    b: &[f64],
    sign: DenominatorSign,
) -> Result<LpOutcome> {
    polytope.check_len(a)?;
    polytope.check_len(b)?;
    let c = polytope.require_critical()?;
    let wrong = match sign {
        DenominatorSign::Positive => b.iter().position(|&x| !(x > 0.0)),
        DenominatorSign::Negative => b.iter().position(|&x| !(x < 0.0)),
    };
    if let Some(k) = wrong {
        return Err(Error::Domain(format!(
            "denominator weight {} at variable {k} violates the declared sign {sign:?}",
            b[k]
        )));
    }
    let flip = if sign == DenominatorSign::Negative { -1.0 } else { 1.0 };
    let n = polytope.grid.len();
    let (mass_row, min_row, norm_row) = (n - 1, n, n + 1);
    let mut rhs = vec![0.0; n + 2];
    rhs[norm_row] = 1.0;
    let mut lp = LinearProgram::new(rhs);
    let mut entries = Vec::with_capacity(8);
    for k in 0..polytope.variables() {
        entries.clear();
        polytope.add_closedness(k, &mut entries);
        entries.push((mass_row, 1.0));
        entries.push((min_row, polytope.action[k]));
        entries.push((norm_row, b[k].abs()));
        lp.add_column(flip * a[k], &entries);
    }
    let t = lp.add_column(0.0, &[(mass_row, -1.0), (min_row, c - polytope.tol_min)]);
    lp.add_column(0.0, &[(min_row, 1.0)]);
    let sol = lp.solve().map_err(|e| match e {
        Error::Infeasible(msg) => Error::Infeasible(format!(
            "Mather face empty at tol_min = {:.3e} ({msg}); increase tol_min",
            polytope.tol_min
        )),
        other => other,
    })?;
    let scale = sol.x[t];
    if !(scale > 0.0) {
        return Err(Error::Lp("Charnes–Cooper scale vanished".into()));
    }
    let w: Vec<f64> = sol.x[..polytope.variables()].iter().map(|v| v / scale).collect();
    let num: f64 = w.iter().zip(a).map(|(w, a)| w * a).sum();
    let den: f64 = w.iter().zip(b).map(|(w, b)| w * b).sum();
    let measure = polytope.measure_from(&w)?;
    Ok(LpOutcome {
        measure,
        value: num / den,
        alternative_optima: lp.has_alternative_optimum(&sol, RC_TOL, STEP_TOL),
        iterations: sol.iterations,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GraphReport {
    pub pass: bool,
    pub max_spread: f64,
    pub threshold: f64,
    /// (node, largest per-axis velocity spread) for every node carrying mass.
    pub spreads: Vec<(usize, f64)>,
}

/// Per-node velocity spread of the support; passes iff every spread ≤ 2 lattice steps.
pub fn graph_check(mu: &DiscreteMeasure, tol: f64) -> GraphReport {
    let vs = &mu.vset;
    let nv = vs.len();
    let d = vs.dim();
    let threshold = 2.0 * vs.step();
    let mut spreads = Vec::new();
    let mut max_spread: f64 = 0.0;
    for (node, chunk) in mu.weights.chunks(nv).enumerate() {
        let total: f64 = chunk.iter().sum();
        if total < tol {
            continue;
        }
        let mut lo = [f64::INFINITY; MAX_DIM];
        let mut hi = [f64::NEG_INFINITY; MAX_DIM];
        for (j, &w) in chunk.iter().enumerate() {
            if w > tol * 1e-3 {
                let v = vs.get(j);
                for a in 0..d {
                    lo[a] = lo[a].min(v[a]);
                    hi[a] = hi[a].max(v[a]);
                }
            }
        }
        let spread = (0..d).map(|a| (hi[a] - lo[a]).max(0.0)).fold(0.0, f64::max);
        max_spread = max_spread.max(spread);
        spreads.push((node, spread));
    }
    GraphReport { pass: max_spread <= threshold + 1e-12, max_spread, threshold, spreads }
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
    fn closedness_examples() {
        let g = PeriodicGrid::new(1, 16).unwrap();
        let vs = velocity_set(2.0, 5, 1).unwrap();
        let dt = 1.0 / 32.0;
        let op = closedness_operator(&g, &vs, dt);
        for k in 0..op.cols() {
            let s: f64 = op.column(k).map(|(_, a)| a).sum();
            assert!(s.abs() < 1e-15);
        }
        let nv = vs.len();
        let mut at_rest = vec![0.0; g.len() * nv];
        for i in 0..g.len() {
            at_rest[i * nv + vs.zero_index()] = (i + 1) as f64;
        }
        assert_eq!(op.max_defect(&at_rest), 0.0);
        let mut uniform = vec![0.0; g.len() * nv];
        for i in 0..g.len() {
            uniform[i * nv + 3] = 1.0 / 16.0;
        }
        assert!(op.max_defect(&uniform) < 1e-15);
        let moving = DiscreteMeasure::dirac(g, vs.clone(), 4, 4);
        let r = op.apply(moving.weights());
        assert_eq!(r[4], -1.0);
        assert!(r.iter().any(|&x| x > 0.0));
        assert!((closedness_defect(&moving, &op) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn free_particle_lp() {
        let m = mech("0");
        let g = PeriodicGrid::new(1, 16).unwrap();
        let vs = velocity_set(2.0, 9, 1).unwrap();
        let p = MatherPolytope::new(&m, g, &vs, 0.4 / 16.0 / 2.0).unwrap();
        let out = solve_mather_lp(&p).unwrap();
        assert!(out.value.abs() < 1e-12);
        assert!((out.measure.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_potential_lp_concentrates_at_the_maximum() {
        let m = mech("cos(1)");
        let g = PeriodicGrid::new(1, 32).unwrap();
        let vs = velocity_set(3.0, 17, 1).unwrap();
        let dt = crate::hj::default_dt(&g, &vs);
        let (p, out) = MatherPolytope::build(&m, g, &vs, dt, 1e-6).unwrap();
        assert!((out.value + 1.0).abs() < 1e-9, "{}", out.value);
        assert!((out.measure.weight(0, vs.zero_index()) - 1.0).abs() < 1e-9);
        assert!(closedness_defect(&out.measure, p.closedness()) < 1e-9);
        assert!(graph_check(&out.measure, 1e-6).pass);
        let phi: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let r = minimize_linear_over_mather(&p, &p.lift(&phi)).unwrap();
        assert!((r.value - phi[0]).abs() < 1e-3, "{} {}", r.value, phi[0]);
        let ones = vec![1.0; p.variables()];
        assert!((minimize_linear_over_mather(&p, &ones).unwrap().value - 1.0).abs() < 1e-12);
        let same = minimize_linear_over_mather(&p, p.action()).unwrap();
        assert!((same.value - out.value).abs() < 1e-9);
    }

    #[test]
    fn fractional_identities() {
        let m = mech("cos(1) + 0.3*sin(2)");
        let g = PeriodicGrid::new(1, 16).unwrap();
        let vs = velocity_set(3.0, 9, 1).unwrap();
        let dt = crate::hj::default_dt(&g, &vs);
        let (p, _) = MatherPolytope::build(&m, g, &vs, dt, 1e-6).unwrap();
        let b: Vec<f64> = (0..p.variables()).map(|k| 1.0 + 0.5 * ((k % 7) as f64)).collect();
        let a: Vec<f64> = b.iter().map(|x| 2.5 * x).collect();
        let r = fractional_minimize(&p, &a, &b, DenominatorSign::Positive).unwrap();
        assert!((r.value - 2.5).abs() < 1e-9);
        assert!((r.measure.mass() - 1.0).abs() < 1e-9);
        let nb: Vec<f64> = b.iter().map(|x| -x).collect();
        let r = fractional_minimize(&p, &a, &nb, DenominatorSign::Negative).unwrap();
        assert!((r.value + 2.5).abs() < 1e-9);
        assert!(fractional_minimize(&p, &a, &b, DenominatorSign::Negative).is_err());
    }

    #[test]
    fn graph_check_flags_two_velocities() {
        let g = PeriodicGrid::new(1, 8).unwrap();
        let vs = velocity_set(2.0, 9, 1).unwrap();
        let mut w = vec![0.0; g.len() * vs.len()];
        w[3 * vs.len()] = 0.5;
        w[3 * vs.len() + 8] = 0.5;
        let mu = DiscreteMeasure::new(g, vs, w).unwrap();
        assert!(!graph_check(&mu, 1e-6).pass);
    }
}
