//! The selection operator, the limit-solution formula and the checks built on
//! them.
//!
//! For a critical Hamiltonian G with barrier h and a weight σ > 0,
//!
//! ```text
//! 𝔓φ(x) = min over Mather measures μ of ∫ σ(y)(h(y,x) + φ(y)) dμ / ∫ σ dμ
//! ```
//!
//! Every node needs one linear-fractional programme over the Mather face.

use rayon::prelude::*;
use serde::Serialize;

use crate::barrier::BarrierMatrix;
use crate::error::{Error, Result};
use crate::hj::SemiLagrangian;
use crate::mather::{fractional_minimize, minimize_linear_over_mather, DenominatorSign, DiscreteMeasure, MatherPolytope};
use crate::models::ControlModel;
use crate::torus::{fmt17, GridField, PeriodicGrid};

#[derive(Clone, Debug)]
pub struct SelectionResult {
    pub field: GridField,
    pub per_x_optimizer: Vec<DiscreteMeasure>,
    pub per_x_value: Vec<f64>,
    pub multiplicity: Vec<bool>,
}

impl SelectionResult {
    fn collect(grid: PeriodicGrid, rows: Vec<(f64, DiscreteMeasure, bool)>) -> Self {
        let per_x_value: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let multiplicity = rows.iter().map(|r| r.2).collect();
        let per_x_optimizer = rows.into_iter().map(|r| r.1).collect();
        Self { field: GridField::from_vec_unchecked(grid, per_x_value.clone()), per_x_optimizer, per_x_value, multiplicity }
    }

    /// Rows `node,value,multiplicity`.
    pub fn write_values_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "node,value,multiplicity")?;
        for (i, (v, m)) in self.per_x_value.iter().zip(&self.multiplicity).enumerate() {
            writeln!(w, "{i},{},{}", fmt17(*v), u8::from(*m))?;
        }
        Ok(())
    }
}

fn check_inputs(barrier: &BarrierMatrix, polytope: &MatherPolytope, fields: &[&GridField]) -> Result<()> {
    if barrier.grid() != polytope.grid() {
        return Err(Error::Domain("barrier and polytope live on different grids".into()));
    }
    for f in fields {
        if f.grid() != polytope.grid() {
            return Err(Error::Domain("field and polytope live on different grids".into()));
        }
    }
    Ok(())
}

fn per_node<F>(grid: &PeriodicGrid, solve: F) -> Result<Vec<(f64, DiscreteMeasure, bool)>>
where
    F: Fn(usize) -> Result<(f64, DiscreteMeasure, bool)> + Sync,
{
    (0..grid.len()).into_par_iter().map(|x| solve(x).map_err(|e| Error::at_node(x, e))).collect()
}

/// 𝔓^σ φ on every node.
pub fn apply_selection_operator(
    sigma: &GridField,
    phi: &GridField,
    barrier: &BarrierMatrix,
    polytope: &MatherPolytope,
) -> Result<SelectionResult> {
    check_inputs(barrier, polytope, &[sigma, phi])?;
    if let Some(i) = (0..sigma.len()).find(|&i| !(sigma.value(i) > 0.0)) {
        return Err(Error::Domain(format!("σ must be positive, got {} at node {i}", sigma.value(i))));
    }
    let b = polytope.lift(sigma.values());
    let grid = *polytope.grid();
    let rows = per_node(&grid, |x| {
        let a: Vec<f64> = (0..polytope.variables())
            .map(|k| {
                let y = polytope.node_of(k);
                sigma.value(y) * (barrier.value(y, x) + phi.value(y))
            })
            .collect();
        let out = fractional_minimize(polytope, &a, &b, DenominatorSign::Positive)?;
        Ok((out.value, out.measure, out.alternative_optima))
    })?;
    Ok(SelectionResult::collect(grid, rows))
}

/// u₀(x) = min over Mather measures of ∫ (h(y,x)·∂L/∂u + V₀(y)) dμ / ∫ ∂L/∂u dμ.
pub fn limit_solution_formula(
    model: &ControlModel,
    v0: &GridField,
    barrier: &BarrierMatrix,
    polytope: &MatherPolytope,
) -> Result<SelectionResult> {
    check_inputs(barrier, polytope, &[v0])?;
    let grid = *polytope.grid();
    let d = grid.dim();
    let nv = polytope.vset().len();
    let mut dl = Vec::with_capacity(polytope.variables());
    for y in grid.nodes() {
        for v in polytope.vset().iter() {
            dl.push(model.dl_du0(&y.coords()[..d], v));
        }
    }
    if let Some(k) = dl.iter().position(|&x| !(x < 0.0)) {
        return Err(Error::Model(format!(
            "∂L/∂u(x,v,0) = {} ≥ 0 at node {} velocity {}; the model is not strictly increasing in u",
            dl[k],
            k / nv,
            k % nv
        )));
    }
    let rows = per_node(&grid, |x| {
        let a: Vec<f64> = (0..dl.len())
            .map(|k| {
                let y = k / nv;
                barrier.value(y, x) * dl[k] + v0.value(y)
            })
            .collect();
        let out = fractional_minimize(polytope, &a, &dl, DenominatorSign::Negative)?;
        Ok((out.value, out.measure, out.alternative_optima))
    })?;
    Ok(SelectionResult::collect(grid, rows))
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPointCheck {
    pub distance: f64,
    pub tol: f64,
    pub pass: bool,
}

/// ‖𝔓^σ u − u‖∞ ≤ tol.
pub fn check_fixed_point(
    sigma: &GridField,
    u: &GridField,
    barrier: &BarrierMatrix,
    polytope: &MatherPolytope,
    tol: f64,
) -> Result<FixedPointCheck> {
    let image = apply_selection_operator(sigma, u, barrier, polytope)?;
    let distance = image.field.sup_distance(u);
    Ok(FixedPointCheck { distance, tol, pass: distance <= tol })
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub const LIPSCHITZ_SLACK: f64 = 1e-7;

/// ‖𝔓φ₁ − 𝔓φ₂‖∞ ≤ ‖φ₁ − φ₂‖∞ + 1e−7.
pub fn check_operator_lipschitz(
    sigma: &GridField,
    phi1: &GridField,
    phi2: &GridField,
    barrier: &BarrierMatrix,
    polytope: &MatherPolytope,
) -> Result<LipschitzCheck> {
    let p1 = apply_selection_operator(sigma, phi1, barrier, polytope)?;
    let p2 = apply_selection_operator(sigma, phi2, barrier, polytope)?;
    let lhs = p1.field.sup_distance(&p2.field);
    let rhs = phi1.sup_distance(phi2);
    Ok(LipschitzCheck { lhs, rhs, pass: lhs <= rhs + LIPSCHITZ_SLACK })
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonVerdict {
    /// min over Mather measures of ∫ σ(u₂ − u₁) dμ.
    pub min_integral: f64,
    pub hypothesis: bool,
    /// max (u₁ − u₂).
    pub max_excess: f64,
    pub conclusion: bool,
    /// hypothesis ⇒ conclusion.
    pub implication_holds: bool,
}

pub fn measure_comparison(
    u1: &GridField,
    u2: &GridField,
    sigma: &GridField,
    polytope: &MatherPolytope,
    tol: f64,
) -> Result<ComparisonVerdict> {
    for f in [u1, u2, sigma] {
        if f.grid() != polytope.grid() {
            return Err(Error::Domain("field and polytope live on different grids".into()));
        }
    }
    let diff: Vec<f64> = (0..u1.len()).map(|i| sigma.value(i) * (u2.value(i) - u1.value(i))).collect();
    let out = minimize_linear_over_mather(polytope, &polytope.lift(&diff))?;
    let max_excess = (0..u1.len()).map(|i| u1.value(i) - u2.value(i)).fold(f64::NEG_INFINITY, f64::max);
    let hypothesis = out.value >= -tol;
    let conclusion = max_excess <= tol;
    Ok(ComparisonVerdict {
        min_integral: out.value,
        hypothesis,
        max_excess,
        conclusion,
        implication_holds: !hypothesis || conclusion,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CandidateVerdict {
    pub index: usize,
    /// max (w − T[w]) / dt for the critical scheme.
    pub subsolution_defect: f64,
    pub is_subsolution: bool,
    /// min over Mather measures of ∫ (w ∂L/∂u − V₀) dμ.
    pub measure_margin: Option<f64>,
    pub member: bool,
    /// max (w − u₀).
    pub excess: Option<f64>,
    pub dominated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LargestSubsolutionReport {
    pub candidates: Vec<CandidateVerdict>,
    /// Indices of members that exceed u₀.
    pub violations: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SubsolutionTolerances {
    /// Allowed one-sided defect of the critical scheme.
    pub residual: f64,
    /// Slack in the measure inequality.
    pub measure: f64,
    /// Slack in w ≤ u₀.
    pub domination: f64,
}

/// Checks that every admissible candidate subsolution lies below u₀.
pub fn check_largest_subsolution(
    model: &ControlModel,
    u0: &GridField,
    v0: &GridField,
    polytope: &MatherPolytope,
    candidates: &[GridField],
    tol: SubsolutionTolerances,
) -> Result<LargestSubsolutionReport> {
    let c = polytope
        .critical_value()
        .ok_or_else(|| Error::Config("polytope has no minimality constraint".into()))?;
    let grid = *polytope.grid();
    let scheme = SemiLagrangian::critical(model, grid, polytope.vset(), polytope.dt(), c)?;
    let d = grid.dim();
    let mut dl = Vec::with_capacity(polytope.variables());
    for y in grid.nodes() {
        for v in polytope.vset().iter() {
            dl.push(model.dl_du0(&y.coords()[..d], v));
        }
    }
    let mut verdicts = Vec::with_capacity(candidates.len());
    let mut violations = Vec::new();
    for (index, w) in candidates.iter().enumerate() {
        if w.grid() != &grid {
            return Err(Error::Domain(format!("candidate {index} lives on a different grid")));
        }
        let (_, down) = scheme.one_sided_residuals(w.values());
        let is_subsolution = down <= tol.residual;
        let mut verdict = CandidateVerdict {
            index,
            subsolution_defect: down,
            is_subsolution,
            measure_margin: None,
            member: false,
            excess: None,
            dominated: false,
        };
        if is_subsolution {
            let cost: Vec<f64> = (0..dl.len())
                .map(|k| {
                    let y = polytope.node_of(k);
                    w.value(y) * dl[k] - v0.value(y)
                })
                .collect();
            let margin = minimize_linear_over_mather(polytope, &cost)?.value;
            verdict.measure_margin = Some(margin);
            verdict.member = margin >= -tol.measure;
            if verdict.member {
                let excess = (0..w.len()).map(|i| w.value(i) - u0.value(i)).fold(f64::NEG_INFINITY, f64::max);
                verdict.excess = Some(excess);
                verdict.dominated = excess <= tol.domination;
                if !verdict.dominated {
                    violations.push(index);
                }
            }
        }
        verdicts.push(verdict);
    }
    Ok(LargestSubsolutionReport { candidates: verdicts, violations })
}

/// Barrier rows from `sources`, their pairwise minima, and constant shifts of both.
pub fn candidate_solutions(barrier: &BarrierMatrix, sources: &[usize], shifts: &[f64]) -> Vec<GridField> {
    let grid = *barrier.grid();
    let rows: Vec<Vec<f64>> = sources.iter().map(|&y| barrier.row(y).to_vec()).collect();
    let mut base = rows.clone();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            base.push(rows[i].iter().zip(&rows[j]).map(|(a, b)| a.min(*b)).collect());
        }
    }
    let mut out = Vec::with_capacity(base.len() * (1 + shifts.len()));
    for b in &base {
        out.push(GridField::from_vec_unchecked(grid, b.clone()));
        for &k in shifts {
            out.push(GridField::from_vec_unchecked(grid, b.iter().map(|v| v + k).collect()));
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub witness: DiscreteMeasure,
    pub value: f64,
    pub multiplicity: bool,
}

/// An optimal Mather measure for 𝔓φ(x) with σ ≡ 1, and whether the optimum is non-unique.
pub fn equilibrium_measures(
    phi: &GridField,
    x: usize,
    barrier: &BarrierMatrix,
    polytope: &MatherPolytope,
) -> Result<Equilibrium> {
    check_inputs(barrier, polytope, &[phi])?;
    if x >= polytope.grid().len() {
        return Err(Error::Domain(format!("node {x} outside the grid")));
    }
    let cost: Vec<f64> = (0..polytope.variables())
        .map(|k| {
            let y = polytope.node_of(k);
            barrier.value(y, x) + phi.value(y)
        })
        .collect();
    let out = minimize_linear_over_mather(polytope, &cost)?;
    Ok(Equilibrium { witness: out.measure, value: out.value, multiplicity: out.alternative_optima })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{peierls_barrier, BarrierParams};
    use crate::hj::default_dt;
    use crate::models::{builtin_model, velocity_set, ModelParams};

    struct Fixture {
        model: ControlModel,
        barrier: BarrierMatrix,
        polytope: MatherPolytope,
    }

    fn fixture(u: &str, n: usize) -> Fixture {
        let model =
            builtin_model("mechanical", &ModelParams { potential_u: Some(u.parse().unwrap()), ..Default::default() })
                .unwrap();
        let g = PeriodicGrid::new(1, n).unwrap();
        let vs = velocity_set(3.0, 9, 1).unwrap();
        let dt = default_dt(&g, &vs);
        let (polytope, lp) = MatherPolytope::build(&model, g, &vs, dt, 1e-7).unwrap();
        let barrier = peierls_barrier(&model, g, -lp.value, &BarrierParams::default(), dt, &vs).unwrap();
        Fixture { model, barrier, polytope }
    }

    #[test]
    fn free_particle_operator_is_the_minimum() {
        let f = fixture("0", 16);
        let g = *f.polytope.grid();
        let phi = GridField::from_fn(g, |x| (2.0 * std::f64::consts::PI * x.coords()[0]).sin() + 0.2 * x.coords()[0]).unwrap();
        let one = GridField::constant(g, 1.0);
        let r = apply_selection_operator(&one, &phi, &f.barrier, &f.polytope).unwrap();
        for (x, v) in r.per_x_value.iter().enumerate() {
            let brute = (0..g.len()).map(|y| f.barrier.value(y, x) + phi.value(y)).fold(f64::INFINITY, f64::min);
            assert!((v - brute).abs() < 1e-9, "{v} {brute}");
        }
    }

    #[test]
    fn cosine_operator_and_equivariance() {
        let f = fixture("cos(1)", 16);
        let g = *f.polytope.grid();
        let one = GridField::constant(g, 1.0);
        let phi = GridField::from_fn(g, |x| (2.0 * std::f64::consts::PI * x.coords()[0]).cos() * 0.3).unwrap();
        let r = apply_selection_operator(&one, &phi, &f.barrier, &f.polytope).unwrap();
        for x in 0..g.len() {
            assert!((r.per_x_value[x] - (f.barrier.value(0, x) + phi.value(0))).abs() < 1e-6);
            let e = equilibrium_measures(&phi, x, &f.barrier, &f.polytope).unwrap();
            assert!((e.value - r.per_x_value[x]).abs() < 1e-8);
        }
        let shifted = apply_selection_operator(&one, &phi.map(|v| v + 2.5), &f.barrier, &f.polytope).unwrap();
        assert!(shifted.field.sup_distance(&r.field.map(|v| v + 2.5)) < 1e-9);
        let u0 = limit_solution_formula(&f.model, &phi, &f.barrier, &f.polytope).unwrap();
        for x in 0..g.len() {
            assert!((u0.per_x_value[x] - (f.barrier.value(0, x) - phi.value(0))).abs() < 1e-6);
        }
    }

    #[test]
    fn comparison_examples() {
        let f = fixture("cos(1)", 16);
        let g = *f.polytope.grid();
        let one = GridField::constant(g, 1.0);
        let u = GridField::new(g, f.barrier.row(0).to_vec()).unwrap();
        let v = measure_comparison(&u, &u, &one, &f.polytope, 1e-9).unwrap();
        assert!(v.hypothesis && v.conclusion);
        let v = measure_comparison(&u, &u.map(|x| x + 1.0), &one, &f.polytope, 1e-9).unwrap();
        assert!(v.hypothesis && v.conclusion);
        let v = measure_comparison(&u.map(|x| x + 0.01), &u, &one, &f.polytope, 1e-9).unwrap();
        assert!(!v.hypothesis && v.implication_holds);
    }
}
