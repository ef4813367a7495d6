//! Experiment configuration files.
//!
//! Configs are TOML documents: top-level `kind` and `seed`, then the tables
//! `[model]`, `[grid]`, `[vset]`, `[solver]`, `[critical]`, `[barrier]`,
//! `[suite]`, `[thresholds]` and `[output]`. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierParams, CriticalMethod};
use crate::error::{Error, Result};
use crate::hj::{default_dt, SolverParams, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::models::{builtin_model, velocity_set, ControlModel, ModelParams, VelocitySet, BUILTIN_MODELS};
use crate::profile::Profile;
use crate::torus::PeriodicGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "vanishing_discount")]
    VanishingDiscount,
    #[serde(rename = "example_6_1")]
    ShiftedQuadraticLimit,
    #[serde(rename = "nonexistence_3_4")]
    Nonexistence,
    #[serde(rename = "operator_suite")]
    OperatorSuite,
    #[serde(rename = "occupation_suite")]
    OccupationSuite,
    #[serde(rename = "barrier_suite")]
    BarrierSuite,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::VanishingDiscount => "vanishing_discount",
            Self::ShiftedQuadraticLimit => "example_6_1",
            Self::Nonexistence => "nonexistence_3_4",
            Self::OperatorSuite => "operator_suite",
            Self::OccupationSuite => "occupation_suite",
            Self::BarrierSuite => "barrier_suite",
        }
    }

    fn needs_schedule(self) -> bool {
        matches!(
            self,
            Self::VanishingDiscount | Self::ShiftedQuadraticLimit | Self::Nonexistence | Self::OccupationSuite
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub potential_u: Option<String>,
    pub sigma: Option<String>,
    pub alpha: Option<Vec<f64>>,
    pub phi: Option<String>,
    pub v: Option<String>,
    pub v_slope: Option<String>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub d: usize,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VsetConfig {
    pub vmax: f64,
    pub m: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub lambdas: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { dt: None, tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, lambdas: Vec::new() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticalConfig {
    pub methods: Vec<CriticalMethod>,
    pub discount_lambdas: Vec<f64>,
    pub longtime_t: f64,
}

impl Default for CriticalConfig {
    fn default() -> Self {
        Self {
            methods: vec![CriticalMethod::Lp, CriticalMethod::Discount],
            discount_lambdas: vec![1e-2, 1e-3, 1e-4],
            longtime_t: 8.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    /// Random field pairs for the operator suite.
    pub pairs: usize,
    /// Start point of the calibrated curves.
    pub start: Vec<f64>,
    /// λ·T for the curve horizon.
    pub curve_lambda_t: f64,
    pub tail_tol: f64,
    /// Constant reference for the shifted-quadratic limit; defaults to the mean of V(·,0).
    pub reference: Option<f64>,
    /// Barrier rows used as fixed-point candidates and comparison sources.
    pub sources: Vec<usize>,
    /// Random triples for the triangle inequality.
    pub triples: usize,
    /// Seeded candidate pairs for the comparison check.
    pub comparison_pairs: usize,
    /// Constant shifts applied to candidate solutions.
    pub shifts: Vec<f64>,
    /// Curve time step; defaults to the solver time step.
    pub curve_dt: Option<f64>,
    /// Node at which equilibrium measures are computed with φ ≡ 0.
    pub query: Option<usize>,
    /// Diagonal tolerance of the reported Aubry set.
    pub aubry_tol: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            pairs: 20,
            start: vec![0.25],
            curve_lambda_t: 18.0,
            tail_tol: crate::curves::DEFAULT_TAIL_TOL,
            reference: None,
            sources: Vec::new(),
            triples: 1000,
            comparison_pairs: 50,
            shifts: vec![0.05, -0.05],
            curve_dt: None,
            query: None,
            aubry_tol: 0.03,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// sup-norm error at the last λ.
    pub final_error: f64,
    /// Spread among critical-value methods.
    pub spread: f64,
    /// Slack in the triangle inequality of the barrier.
    pub triangle: f64,
    /// Relative error of the discounted mass identity.
    pub mass_identity: f64,
    /// Residual constant C in ‖residual‖ ≤ C·h for operator images.
    pub residual_constant: f64,
    /// Fixed-point tolerance as a multiple of the measured grid error.
    pub fixed_point_factor: f64,
    /// Distance of the computed critical value from a closed-form one.
    pub critical: f64,
    /// Tolerance of the hypothesis and conclusion in the comparison check.
    pub comparison: f64,
    /// TV distance of the projected Mather measure from the uniform measure.
    pub tv_uniform: Option<f64>,
    /// Constant C in ‖residual‖ ≤ C·h for barrier rows.
    pub column_residual: f64,
    /// Bound on max |h|.
    pub barrier_max_abs: Option<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            final_error: 0.05,
            spread: 0.05,
            triangle: 1e-6,
            mass_identity: 0.05,
            residual_constant: 1e-9,
            fixed_point_factor: 3.0,
            critical: 0.05,
            comparison: 1e-6,
            tv_uniform: None,
            column_residual: 1e-9,
            barrier_max_abs: None,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub vset: VsetConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub critical: CriticalConfig,
    #[serde(default)]
    pub barrier: BarrierParams,
    #[serde(default)]
    pub suite: SuiteConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub output: OutputConfig,
}

fn profile(s: &Option<String>, key: &str) -> Result<Option<Profile>> {
    s.as_deref()
        .map(|t| t.parse().map_err(|e| Error::Config(format!("model.{key}: {e}"))))
        .transpose()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field before any computation.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !BUILTIN_MODELS.contains(&self.model.name.as_str()) {
            problems.push(format!("unknown model `{}`; available: {}", self.model.name, BUILTIN_MODELS.join(", ")));
        }
        if let Err(e) = self.model_params() {
            problems.push(e.to_string());
        }
        if let Err(e) = PeriodicGrid::new(self.grid.d, self.grid.n) {
            problems.push(e.to_string());
        }
        if let Err(e) = velocity_set(self.vset.vmax, self.vset.m, self.grid.d.clamp(1, 2)) {
            problems.push(e.to_string());
        }
        if let Some(dt) = self.solver.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                problems.push(format!("solver.dt must be positive, got {dt}"));
            }
        }
        if !(self.solver.tol > 0.0) {
            problems.push("solver.tol must be positive".into());
        }
        let l = &self.solver.lambdas;
        if l.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            problems.push("solver.lambdas must be positive".into());
        }
        if l.windows(2).any(|w| w[1] >= w[0]) {
            problems.push("solver.lambdas must be strictly descending".into());
        }
        if self.kind.needs_schedule() && l.is_empty() {
            problems.push(format!("experiment kind {} needs a λ schedule", self.kind.as_str()));
        }
        if self.critical.methods.is_empty() {
            problems.push("critical.methods is empty".into());
        }
        let dl = &self.critical.discount_lambdas;
        if dl.is_empty() || dl.windows(2).any(|w| w[1] >= w[0]) || dl.iter().any(|&x| !(x > 0.0)) {
            problems.push("critical.discount_lambdas must be positive and strictly descending".into());
        }
        let b = &self.barrier;
        if !(b.t_max >= 8.0) {
            problems.push(format!("barrier.t_max must be at least 8, got {}", b.t_max));
        }
        if !(0.5 <= b.window.0 && b.window.0 < b.window.1 && b.window.1 <= 1.0) {
            problems.push("barrier.window must satisfy 0.5 ≤ a < b ≤ 1".into());
        }
        if self.suite.start.len() != self.grid.d {
            problems.push(format!("suite.start has {} coordinates, grid dimension is {}", self.suite.start.len(), self.grid.d));
        }
        let nodes = self.grid.n.saturating_pow(self.grid.d as u32);
        if let Some(&s) = self.suite.sources.iter().find(|&&s| s >= nodes) {
            problems.push(format!("suite.sources contains node {s} outside the grid"));
        }
        if let Some(dt) = self.suite.curve_dt {
            if !(dt > 0.0 && dt.is_finite()) {
                problems.push(format!("suite.curve_dt must be positive, got {dt}"));
            }
        }
        if let Some(q) = self.suite.query.filter(|&q| q >= nodes) {
            problems.push(format!("suite.query node {q} outside the grid"));
        }
        if self.kind == ExperimentKind::OperatorSuite && (self.grid.n % 2 != 0 || self.grid.n < 8) {
            problems.push("operator_suite needs an even grid size n ≥ 8 for the coarse-grid error estimate".into());
        }
        if !(self.suite.curve_lambda_t > 0.0) {
            problems.push("suite.curve_lambda_t must be positive".into());
        }
        let t = &self.thresholds;
        for (name, v) in [
            ("final_error", t.final_error),
            ("spread", t.spread),
            ("triangle", t.triangle),
            ("mass_identity", t.mass_identity),
            ("residual_constant", t.residual_constant),
            ("fixed_point_factor", t.fixed_point_factor),
            ("critical", t.critical),
            ("comparison", t.comparison),
            ("tv_uniform", t.tv_uniform.unwrap_or(1.0)),
            ("column_residual", t.column_residual),
            ("barrier_max_abs", t.barrier_max_abs.unwrap_or(1.0)),
        ] {
            if !(v > 0.0) {
                problems.push(format!("thresholds.{name} must be positive"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let m = &self.model;
        Ok(ModelParams {
            dim: Some(self.grid.d),
            potential_u: profile(&m.potential_u, "potential_u")?,
            sigma: profile(&m.sigma, "sigma")?,
            alpha: m.alpha.clone(),
            phi: profile(&m.phi, "phi")?,
            v: profile(&m.v, "v")?,
            v_slope: profile(&m.v_slope, "v_slope")?,
        })
    }

    pub fn build_model(&self) -> Result<ControlModel> {
        builtin_model(&self.model.name, &self.model_params()?)
    }

    pub fn build_grid(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.grid.d, self.grid.n)
    }

    pub fn build_vset(&self) -> Result<VelocitySet> {
        velocity_set(self.vset.vmax, self.vset.m, self.grid.d)
    }

    pub fn dt(&self) -> Result<f64> {
        Ok(match self.solver.dt {
            Some(dt) => dt,
            None => default_dt(&self.build_grid()?, &self.build_vset()?),
        })
    }

    pub fn solver_params(&self) -> Result<SolverParams> {
        Ok(SolverParams {
            dt: Some(self.dt()?),
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            ..SolverParams::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
kind = "vanishing_discount"
[model]
name = "mechanical"
potential_u = "cos(1)"
[grid]
d = 1
n = 32
[vset]
vmax = 3.0
m = 9
[solver]
lambdas = [0.1, 0.05]
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.kind, ExperimentKind::VanishingDiscount);
        assert_eq!(c.thresholds.final_error, 0.05);
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again.to_toml(), c.to_toml());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("[0.1, 0.05]", "[0.05, 0.1]")).is_err());
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("m = 9", "m = 8")).is_err());
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("mechanical", "pendulum")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
        assert!(ExperimentConfig::from_toml(&MINIMAL.replace("cos(1)", "cos(")).is_err());
    }
}
