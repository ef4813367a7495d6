//! Python bindings for the kamlab solvers.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use kamlab::barrier::{
    aubry_set, critical_value, peierls_barrier, BarrierMatrix, BarrierParams, CriticalMethod, CriticalParams,
};
use kamlab::experiment::{run_experiment as run, ExperimentConfig, RunOptions};
use kamlab::hj::{compute_bracket, critical_solution, default_dt, solve_perturbed, Bracket, SolveReport, SolverParams};
use kamlab::mather::MatherPolytope;
use kamlab::models::{builtin_model, velocity_set, ControlModel, ModelParams, VelocitySet, BUILTIN_MODELS};
use kamlab::profile::Profile;
use kamlab::selection::limit_solution_formula;
use kamlab::torus::{GridField, PeriodicGrid, TorusPoint};

fn py_err(e: kamlab::Error) -> PyErr {
    match e {
        kamlab::Error::Config(_) | kamlab::Error::Parse(_) | kamlab::Error::Domain(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn profile(s: Option<&str>) -> PyResult<Option<Profile>> {
    s.map(|s| s.parse::<Profile>().map_err(py_err)).transpose()
}

/// Uniform periodic grid on the unit torus.
#[pyclass(name = "Grid", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyGrid {
    grid: PeriodicGrid,
}

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (d, n))]
    fn new(d: usize, n: usize) -> PyResult<Self> {
        Ok(Self { grid: PeriodicGrid::new(d, n).map_err(py_err)? })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.grid.dim()
    }

    #[getter]
    fn n(&self) -> usize {
        self.grid.n()
    }

    #[getter]
    fn spacing(&self) -> f64 {
        self.grid.spacing()
    }

    fn __len__(&self) -> usize {
        self.grid.len()
    }

    fn coords(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.grid.len() {
            return Err(PyValueError::new_err(format!("node {i} out of range")));
        }
        Ok(self.grid.coords(i)[..self.grid.dim()].to_vec())
    }

    fn nearest_node(&self, x: Vec<f64>) -> PyResult<usize> {
        let p = TorusPoint::new(&x).map_err(py_err)?;
        Ok(self.grid.nearest_node(&p))
    }

    fn __repr__(&self) -> String {
        format!("Grid(d={}, n={})", self.grid.dim(), self.grid.n())
    }
}

/// Iteration record of a discounted solve.
#[pyclass(name = "SolveReport", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
pub struct PySolveReport {
    lambda_: f64,
    iterations: usize,
    final_residual: f64,
    bracket_violations: usize,
    converged: bool,
    above_lambda0: bool,
}

impl From<&SolveReport> for PySolveReport {
    fn from(r: &SolveReport) -> Self {
        Self {
            lambda_: r.lambda,
            iterations: r.iterations,
            final_residual: r.final_residual,
            bracket_violations: r.bracket_violations,
            converged: r.converged,
            above_lambda0: r.above_lambda0,
        }
    }
}

#[pymethods]
impl PySolveReport {
    fn __repr__(&self) -> String {
        format!(
            "SolveReport(lambda_={}, iterations={}, final_residual={:.3e}, converged={})",
            self.lambda_,
            self.iterations,
            self.final_residual,
            if self.converged { "True" } else { "False" }
        )
    }
}

/// Peierls barrier on a grid, h[from, to].
#[pyclass(name = "Barrier", frozen)]
pub struct PyBarrier {
    h: BarrierMatrix,
}

#[pymethods]
impl PyBarrier {
    #[getter]
    fn nodes(&self) -> usize {
        self.h.nodes()
    }

    fn value(&self, from_: usize, to: usize) -> PyResult<f64> {
        let n = self.h.nodes();
        if from_ >= n || to >= n {
            return Err(PyValueError::new_err(format!("index out of range for {n} nodes")));
        }
        Ok(self.h.value(from_, to))
    }

    fn row(&self, from_: usize) -> PyResult<Vec<f64>> {
        self.value(from_, 0)?;
        Ok(self.h.row(from_).to_vec())
    }

    fn diagonal(&self) -> Vec<f64> {
        self.h.diagonal()
    }

    fn to_list(&self) -> Vec<Vec<f64>> {
        (0..self.h.nodes()).map(|i| self.h.row(i).to_vec()).collect()
    }

    #[pyo3(signature = (tol = 1e-6))]
    fn aubry_set(&self, tol: f64) -> Vec<usize> {
        aubry_set(&self.h, tol).nodes
    }

    fn triangle_defect(&self, triples: Vec<(usize, usize, usize)>) -> PyResult<f64> {
        let n = self.h.nodes();
        if triples.iter().any(|&(a, b, c)| a >= n || b >= n || c >= n) {
            return Err(PyValueError::new_err(format!("index out of range for {n} nodes")));
        }
        Ok(self.h.triangle_defect(&triples))
    }

    fn warnings(&self) -> Vec<String> {
        self.h.warnings().to_vec()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.h.save(&path).map_err(py_err)
    }
}

/// A built-in model discretized on a grid with a velocity set.
#[pyclass(name = "Problem")]
pub struct PyProblem {
    model: ControlModel,
    grid: PeriodicGrid,
    vset: VelocitySet,
    dt: f64,
    bracket: Option<Bracket>,
}

impl PyProblem {
    fn bracket(&mut self) -> PyResult<&Bracket> {
        if self.bracket.is_none() {
            let crit = critical_solution(&self.model, self.grid, &self.vset, self.dt, 200_000).map_err(py_err)?;
            self.bracket = Some(compute_bracket(&self.model, &crit, &self.vset).map_err(py_err)?);
        }
        Ok(self.bracket.as_ref().expect("bracket set above"))
    }

    fn field(&self, values: Vec<f64>) -> PyResult<GridField> {
        GridField::new(self.grid, values).map_err(py_err)
    }
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (
        model, n, *, d = 1, vmax = 3.0, m = 33, dt = None,
        potential_u = None, sigma = None, alpha = None, phi = None, v = None, v_slope = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        model: &str,
        n: usize,
        d: usize,
        vmax: f64,
        m: usize,
        dt: Option<f64>,
        potential_u: Option<&str>,
        sigma: Option<&str>,
        alpha: Option<Vec<f64>>,
        phi: Option<&str>,
        v: Option<&str>,
        v_slope: Option<&str>,
    ) -> PyResult<Self> {
        let params = ModelParams {
            dim: Some(d),
            potential_u: profile(potential_u)?,
            sigma: profile(sigma)?,
            alpha,
            phi: profile(phi)?,
            v: profile(v)?,
            v_slope: profile(v_slope)?,
        };
        let model = builtin_model(model, &params).map_err(py_err)?;
        let grid = PeriodicGrid::new(d, n).map_err(py_err)?;
        let vset = velocity_set(vmax, m, d).map_err(py_err)?;
        let dt = dt.unwrap_or_else(|| default_dt(&grid, &vset));
        Ok(Self { model, grid, vset, dt, bracket: None })
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid { grid: self.grid }
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.dt
    }

    #[getter]
    fn velocities(&self) -> Vec<Vec<f64>> {
        self.vset.iter().map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn critical(&self) -> f64 {
        self.model.critical_value()
    }

    #[getter]
    fn analytic_critical_value(&self) -> Option<f64> {
        self.model.analytic_critical_value()
    }

    fn hamiltonian(&self, x: Vec<f64>, p: Vec<f64>, u: f64) -> PyResult<f64> {
        let d = self.model.dim();
        if x.len() != d || p.len() != d {
            return Err(PyValueError::new_err(format!("x and p must have {d} components")));
        }
        Ok(self.model.hamiltonian(&x, &p, u))
    }

    fn lagrangian(&self, x: Vec<f64>, v: Vec<f64>, u: f64) -> PyResult<f64> {
        let d = self.model.dim();
        if x.len() != d || v.len() != d {
            return Err(PyValueError::new_err(format!("x and v must have {d} components")));
        }
        Ok(self.model.lagrangian(&x, &v, u))
    }

    /// Critical-value estimates by method name.
    #[pyo3(signature = (methods = vec!["lp".to_string()]))]
    fn critical_values<'py>(&self, py: Python<'py>, methods: Vec<String>) -> PyResult<Bound<'py, PyDict>> {
        let methods: Vec<CriticalMethod> =
            methods.iter().map(|m| m.parse().map_err(py_err)).collect::<PyResult<_>>()?;
        let params = CriticalParams { dt: Some(self.dt), ..CriticalParams::new(self.grid, self.vset.clone()) };
        let data = py.detach(|| critical_value(&self.model, &methods, &params)).map_err(py_err)?;
        let out = PyDict::new(py);
        for (m, c) in &data.estimates {
            let name = match m {
                CriticalMethod::Lp => "lp",
                CriticalMethod::Discount => "discount",
                CriticalMethod::Longtime => "longtime",
            };
            out.set_item(name, c)?;
        }
        Ok(out)
    }

    /// Solves the Mather LP, re-anchors the model at its value and returns it.
    fn anchor(&mut self, py: Python<'_>) -> PyResult<f64> {
        let (model, grid, vset, dt) = (&self.model, self.grid, &self.vset, self.dt);
        let (_, out) = py.detach(|| MatherPolytope::build(model, grid, vset, dt, 0.0)).map_err(py_err)?;
        let c = -out.value;
        self.model = self.model.clone().with_critical_value(c);
        self.bracket = None;
        Ok(c)
    }

    /// Projected Mather measure on the grid nodes.
    fn mather_measure(&self, py: Python<'_>) -> PyResult<Vec<f64>> {
        let (model, grid, vset, dt) = (&self.model, self.grid, &self.vset, self.dt);
        let (_, out) = py.detach(|| MatherPolytope::build(model, grid, vset, dt, 0.0)).map_err(py_err)?;
        Ok(out.measure.normalized().projected())
    }

    /// Solution of the perturbed equation at discount `lambda_`.
    #[pyo3(signature = (lambda_, *, tol = None, max_iter = None, warm_start = None))]
    fn solve(
        &mut self,
        py: Python<'_>,
        lambda_: f64,
        tol: Option<f64>,
        max_iter: Option<usize>,
        warm_start: Option<Vec<f64>>,
    ) -> PyResult<(Vec<f64>, PySolveReport)> {
        let warm = warm_start.map(|w| self.field(w)).transpose()?;
        let mut params = SolverParams { dt: Some(self.dt), ..SolverParams::default() };
        params.tol = tol.unwrap_or(params.tol);
        params.max_iter = max_iter.unwrap_or(params.max_iter);
        self.bracket()?;
        let (model, grid, vset) = (&self.model, self.grid, &self.vset);
        let bracket = self.bracket.as_ref().expect("bracket computed");
        let (u, report) = py
            .detach(|| solve_perturbed(model, grid, lambda_, vset, bracket, &params, warm.as_ref()))
            .map_err(py_err)?;
        Ok((u.into_values(), PySolveReport::from(&report)))
    }

    #[pyo3(signature = (*, t_max = 8.0))]
    fn barrier(&self, py: Python<'_>, t_max: f64) -> PyResult<PyBarrier> {
        let params = BarrierParams { t_max, ..BarrierParams::default() };
        let c = self.model.critical_value();
        let h = py
            .detach(|| peierls_barrier(&self.model, self.grid, c, &params, self.dt, &self.vset))
            .map_err(py_err)?;
        Ok(PyBarrier { h })
    }

    /// Limit of the discounted solutions from the barrier and the Mather set.
    fn limit_formula(&self, py: Python<'_>, barrier: &PyBarrier) -> PyResult<Vec<f64>> {
        let (model, grid, vset, dt) = (&self.model, self.grid, &self.vset, self.dt);
        let c = model.critical_value();
        let v0 = GridField::from_fn(grid, |x| model.potential0(x.coords())).map_err(py_err)?;
        let r = py
            .detach(|| {
                let p = MatherPolytope::new(model, grid, vset, dt)?.with_minimality(c, 0.0);
                limit_solution_formula(model, &v0, &barrier.h, &p)
            })
            .map_err(py_err)?;
        Ok(r.field.into_values())
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(model={:?}, d={}, n={}, velocities={})",
            self.model.name(),
            self.grid.dim(),
            self.grid.n(),
            self.vset.len()
        )
    }
}

#[pyfunction]
fn list_models() -> Vec<&'static str> {
    BUILTIN_MODELS.to_vec()
}

/// Parses and validates a config file; returns its experiment kind.
#[pyfunction]
fn validate_config(path: PathBuf) -> PyResult<&'static str> {
    Ok(ExperimentConfig::load(&path).map_err(py_err)?.kind.as_str())
}

/// Runs a config and writes its artifacts; returns the manifest as JSON text.
#[pyfunction]
#[pyo3(signature = (path, *, output = None, strict = false))]
fn run_experiment(py: Python<'_>, path: PathBuf, output: Option<PathBuf>, strict: bool) -> PyResult<(PathBuf, String)> {
    let opts = RunOptions { output, strict };
    let outcome = py.detach(|| run(&path, &opts)).map_err(py_err)?;
    Ok((outcome.dir, outcome.results.manifest().to_string()))
}

#[pymodule]
#[pyo3(name = "kamlab")]
pub fn kamlab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyProblem>()?;
    m.add_class::<PyBarrier>()?;
    m.add_class::<PySolveReport>()?;
    m.add_function(wrap_pyfunction!(list_models, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
