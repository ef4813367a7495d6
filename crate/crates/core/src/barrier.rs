//! Minimal action h_t by dynamic programming, the Peierls barrier, the Aubry
//! set and the critical value.
//!
//! Entry `(i, j)` of a [`BarrierMatrix`] is the cost of going from node `i`
//! to node `j`. One step of the dynamic programme is
//!
//! ```text
//! h_{t+dt}(x, y) = min_v { dt·L⁰(y, v) + I[h_t(x, ·)](y − v·dt) }
//! ```
//!
//! with the running cost charged at the arrival node, so that every barrier
//! row is an exact fixed point of the critical semi-Lagrangian scheme.

use std::io::{self, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hj::{default_dt, SemiLagrangian, SolverParams};
use crate::mather::{solve_mather_lp, DiscreteMeasure, MatherPolytope};
use crate::models::{ControlModel, VelocitySet};
use crate::torus::{fmt17, GridField, PeriodicGrid, ShiftStencil, MAX_DIM};

/// Sentinel for unreachable entries; arithmetic on it saturates.
pub const BIG: f64 = 1e18;

const MAGIC: &[u8; 4] = b"PBAR";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum BarrierTime {
    Elapsed(f64),
    Peierls,
}

/// Dense node-to-node cost matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BarrierMatrix {
    grid: PeriodicGrid,
    time: BarrierTime,
    values: Vec<f64>,
    warnings: Vec<String>,
}

impl BarrierMatrix {
    /// h_0: zero on the diagonal, [`BIG`] elsewhere.
    pub fn initial(grid: PeriodicGrid) -> Self {
        let n = grid.len();
        let mut values = vec![BIG; n * n];
        for i in 0..n {
            values[i * n + i] = 0.0;
        }
        Self { grid, time: BarrierTime::Elapsed(0.0), values, warnings: Vec::new() }
    }

    pub fn from_values(grid: PeriodicGrid, time: BarrierTime, values: Vec<f64>) -> Result<Self> {
        let n = grid.len();
        if values.len() != n * n {
            return Err(Error::Domain(format!("barrier needs {} entries, got {}", n * n, values.len())));
        }
        Ok(Self { grid, time, values, warnings: Vec::new() })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn time(&self) -> BarrierTime {
        self.time
    }

    pub fn is_peierls(&self) -> bool {
        self.time == BarrierTime::Peierls
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn value(&self, from: usize, to: usize) -> f64 {
        self.values[from * self.grid.len() + to]
    }

    /// Costs from `from` to every node.
    pub fn row(&self, from: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[from * n..(from + 1) * n]
    }

    /// Costs from every node to `to`.
    pub fn column(&self, to: usize) -> Vec<f64> {
        let n = self.grid.len();
        (0..n).map(|i| self.values[i * n + to]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|i| self.value(i, i)).collect()
    }

    /// max over the triples of h(x,z) − h(x,y) − h(y,z), ignoring unreachable entries.
    pub fn triangle_defect(&self, triples: &[(usize, usize, usize)]) -> f64 {
        triples
            .iter()
            .filter_map(|&(x, y, z)| {
                let (a, b, c) = (self.value(x, z), self.value(x, y), self.value(y, z));
                (a < BIG && b < BIG && c < BIG).then(|| a - b - c)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest entry below the sentinel in absolute value.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().filter(|v| v.abs() < BIG).fold(0.0, |a, v| a.max(v.abs()))
    }

    /// 16-byte header ("PBAR", d: u16, n: u16, t: f64, +∞ for the barrier) then row-major f64, little endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.grid.dim() as u16).to_le_bytes())?;
        w.write_all(&(self.grid.n() as u16).to_le_bytes())?;
        let t = match self.time {
            BarrierTime::Elapsed(t) => t,
            BarrierTime::Peierls => f64::INFINITY,
        };
        w.write_all(&t.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 16];
        r.read_exact(&mut head).map_err(|e| Error::Parse(format!("barrier header: {e}")))?;
        if &head[..4] != MAGIC {
            return Err(Error::Parse("barrier file does not start with PBAR".into()));
        }
        let d = u16::from_le_bytes([head[4], head[5]]) as usize;
        let n = u16::from_le_bytes([head[6], head[7]]) as usize;
        let t = f64::from_le_bytes(head[8..16].try_into().expect("8 bytes"));
        let grid = PeriodicGrid::new(d, n)?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::Parse(format!("barrier body: {e}")))?;
        let len = grid.len() * grid.len();
        if bytes.len() != 8 * len {
            return Err(Error::Parse(format!("barrier body has {} bytes, expected {}", bytes.len(), 8 * len)));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let time = if t.is_infinite() { BarrierTime::Peierls } else { BarrierTime::Elapsed(t) };
        Self::from_values(grid, time, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_binary(io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    /// Rows `from,to,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "from,to,value")?;
        let n = self.grid.len();
        for i in 0..n {
            for j in 0..n {
                writeln!(w, "{i},{j},{}", fmt17(self.value(i, j)))?;
            }
        }
        Ok(())
    }
}

/// Precomputed Bellman step of the minimal-action programme.
#[derive(Clone, Debug)]
pub struct ActionDp {
    grid: PeriodicGrid,
    dt: f64,
    stencil: ShiftStencil,
    cost: Vec<f64>,
}

impl ActionDp {
    pub fn new(model: &ControlModel, grid: PeriodicGrid, vset: &VelocitySet, dt: f64) -> Result<Self> {
        if model.dim() != grid.dim() || vset.dim() != grid.dim() {
            return Err(Error::Config("dimension mismatch between model, grid and velocities".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {dt}")));
        }
        let shifts: Vec<[f64; MAX_DIM]> = vset.raw().iter().map(|v| [-v[0] * dt, -v[1] * dt]).collect();
        let stencil = ShiftStencil::new(grid, &shifts);
        let d = grid.dim();
        let mut cost = Vec::with_capacity(vset.len() * grid.len());
        for v in vset.iter() {
            for y in grid.nodes() {
                cost.push(dt * model.lagrangian0(&y.coords()[..d], v));
            }
        }
        Ok(Self { grid, dt, stencil, cost })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn step_into(&self, src: &[f64], dst: &mut [f64]) {
        let n = self.grid.len();
        dst.par_chunks_mut(n).zip(src.par_chunks(n)).for_each_init(
            || vec![0u32; n],
            |arg, (out, row)| {
                self.stencil.min_plus(row, &self.cost, out, arg);
                out.iter_mut().for_each(|v| *v = v.min(BIG));
            },
        );
    }

    pub fn step(&self, a: &BarrierMatrix) -> Result<BarrierMatrix> {
        let t = match a.time {
            BarrierTime::Elapsed(t) => t,
            BarrierTime::Peierls => return Err(Error::Domain("cannot advance the Peierls barrier in time".into())),
        };
        if a.grid != self.grid {
            return Err(Error::Domain("barrier and dynamic programme live on different grids".into()));
        }
        let mut values = vec![0.0; a.values.len()];
        self.step_into(&a.values, &mut values);
        Ok(BarrierMatrix { grid: self.grid, time: BarrierTime::Elapsed(t + self.dt), values, warnings: Vec::new() })
    }

    /// Runs `steps` Bellman steps from h_0, calling `visit(k, h_{k·dt})` after each.
    pub fn run(&self, steps: usize, mut visit: impl FnMut(usize, &[f64])) -> BarrierMatrix {
        let mut cur = BarrierMatrix::initial(self.grid).values;
        let mut next = vec![0.0; cur.len()];
        for k in 1..=steps {
            self.step_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
            visit(k, &cur);
        }
        BarrierMatrix {
            grid: self.grid,
            time: BarrierTime::Elapsed(steps as f64 * self.dt),
            values: cur,
            warnings: Vec::new(),
        }
    }
}

/// One Bellman step h_t → h_{t+dt}.
pub fn min_action_step(model: &ControlModel, a: &BarrierMatrix, dt: f64, vset: &VelocitySet) -> Result<BarrierMatrix> {
    ActionDp::new(model, a.grid, vset, dt)?.step(a)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierParams {
    pub t_max: f64,
    /// Window as fractions of `t_max`.
    pub window: (f64, f64),
    /// Sample every `stride` steps inside the window.
    pub stride: usize,
    /// Allowed decrease of the window minimum between its two halves.
    pub drift_tol: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self { t_max: 8.0, window: (0.5, 1.0), stride: 1, drift_tol: 1e-3 }
    }
}

/// h(x,y) = min over sampled t in the window of h_t(x,y) + c·t.
pub fn peierls_barrier(
    model: &ControlModel,
    grid: PeriodicGrid,
    c: f64,
    params: &BarrierParams,
    dt: f64,
    vset: &VelocitySet,
) -> Result<BarrierMatrix> {
    let (w0, w1) = params.window;
    if !(params.t_max >= 8.0) {
        return Err(Error::Config(format!("Tmax must be at least 8, got {}", params.t_max)));
    }
    if !(0.5 <= w0 && w0 < w1 && w1 <= 1.0) {
        return Err(Error::Config(format!("window ({w0}, {w1}) must lie in [1/2, 1] of Tmax")));
    }
    let dp = ActionDp::new(model, grid, vset, dt)?;
    let steps = (params.t_max / dt).round() as usize;
    let first = (w0 * steps as f64).ceil() as usize;
    let last = (w1 * steps as f64).floor() as usize;
    let mid = (first + last) / 2;
    let stride = params.stride.max(1);
    let nn = grid.len() * grid.len();
    let mut early = vec![f64::INFINITY; nn];
    let mut late = vec![f64::INFINITY; nn];
    dp.run(last, |k, h| {
        if k < first || (k - first) % stride != 0 {
            return;
        }
        let shift = c * k as f64 * dt;
        let target = if k <= mid { &mut early } else { &mut late };
        for (m, &v) in target.iter_mut().zip(h) {
            let s = if v >= BIG { BIG } else { v + shift };
            if s < *m {
                *m = s;
            }
        }
    });
    let mut drift: f64 = 0.0;
    let values: Vec<f64> = early
        .iter()
        .zip(&late)
        .map(|(&a, &b)| {
            if a < BIG && b < BIG {
                drift = drift.max(a - b);
            }
            a.min(b)
        })
        .collect();
    let mut out = BarrierMatrix { grid, time: BarrierTime::Peierls, values, warnings: Vec::new() };
    if drift > params.drift_tol {
        out.warnings.push(format!(
            "barrier still decreasing by {drift:.3e} across the window at Tmax = {}; increase Tmax",
            params.t_max
        ));
    }
    if out.values.iter().any(|&v| v >= BIG) {
        out.warnings.push("some node pairs are unreachable within Tmax".into());
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct AubrySet {
    pub nodes: Vec<usize>,
    /// No diagonal entry was within tolerance and the argmin nodes were returned instead.
    pub fallback: bool,
}

/// {i : h(i,i) ≤ tol}, or the minimizers of the diagonal when that set is empty.
pub fn aubry_set(h: &BarrierMatrix, tol: f64) -> AubrySet {
    let diag = h.diagonal();
    let nodes: Vec<usize> = (0..diag.len()).filter(|&i| diag[i] <= tol).collect();
    if !nodes.is_empty() {
        return AubrySet { nodes, fallback: false };
    }
    let m = diag.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = 1e-12 * (1.0 + m.abs());
    AubrySet { nodes: (0..diag.len()).filter(|&i| diag[i] <= m + slack).collect(), fallback: true }
}

/// The field x ↦ h(y, x).
pub fn solution_from_barrier(h: &BarrierMatrix, y: usize) -> GridField {
    GridField::from_vec_unchecked(h.grid, h.row(y).to_vec())
}

/// sup |u − T_c[u]| / dt for the critical scheme H(x, Du, 0) = c.
pub fn critical_residual(model: &ControlModel, u: &GridField, vset: &VelocitySet, dt: f64, c: f64) -> Result<f64> {
    Ok(SemiLagrangian::critical(model, *u.grid(), vset, dt, c)?.residual(u.values()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticalMethod {
    Lp,
    Discount,
    Longtime,
}

impl std::str::FromStr for CriticalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lp" => Ok(Self::Lp),
            "discount" => Ok(Self::Discount),
            "longtime" => Ok(Self::Longtime),
            other => Err(Error::Config(format!("unknown critical-value method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CriticalParams {
    pub grid: PeriodicGrid,
    pub vset: VelocitySet,
    pub dt: Option<f64>,
    /// Descending λ values for the discount method; the last one is used.
    pub discount_lambdas: Vec<f64>,
    pub longtime_t: f64,
    pub solver: SolverParams,
}

impl CriticalParams {
    pub fn new(grid: PeriodicGrid, vset: VelocitySet) -> Self {
        Self {
            grid,
            vset,
            dt: None,
            discount_lambdas: vec![1e-2, 1e-3, 1e-4],
            longtime_t: 8.0,
            solver: SolverParams::default(),
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or_else(|| default_dt(&self.grid, &self.vset))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalData {
    /// Value of the first requested method.
    pub c: f64,
    pub method: CriticalMethod,
    pub estimates: Vec<(CriticalMethod, f64)>,
    /// Largest pairwise disagreement; present when at least two methods ran.
    pub spread: Option<f64>,
    #[serde(skip)]
    pub lp_measure: Option<DiscreteMeasure>,
}

impl CriticalData {
    pub fn estimate(&self, method: CriticalMethod) -> Option<f64> {
        self.estimates.iter().find(|(m, _)| *m == method).map(|(_, c)| *c)
    }
}

/// c = −mean(λ w_λ) for the discounted equation λw + H(x, Dw, 0) = 0 at the last λ.
pub fn discount_estimate(model: &ControlModel, params: &CriticalParams) -> Result<f64> {
    let lambdas = &params.discount_lambdas;
    if lambdas.is_empty() || lambdas.windows(2).any(|w| w[1] >= w[0]) || lambdas.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Config("discount schedule must be positive and strictly descending".into()));
    }
    let dt = params.dt();
    let mut w = vec![0.0; params.grid.len()];
    let mut last = 0.0;
    for &lambda in lambdas {
        let scheme = SemiLagrangian::discounted(model, params.grid, &params.vset, dt, lambda)?;
        let fp = scheme.iterate(&w, None, &params.solver);
        if !fp.converged {
            return Err(Error::Model(format!(
                "discounted solve at λ = {lambda} stopped at residual {:.3e}",
                fp.residual
            )));
        }
        w = fp.values;
        last = -lambda * w.iter().sum::<f64>() / w.len() as f64;
    }
    Ok(last)
}

/// c = −min_x h_T(x,x)/T.
pub fn longtime_estimate(model: &ControlModel, params: &CriticalParams) -> Result<f64> {
    let dt = params.dt();
    let dp = ActionDp::new(model, params.grid, &params.vset, dt)?;
    let steps = (params.longtime_t / dt).round() as usize;
    if steps == 0 {
        return Err(Error::Config("longtime horizon shorter than one step".into()));
    }
    let h = dp.run(steps, |_, _| {});
    let m = h.diagonal().into_iter().fold(f64::INFINITY, f64::min);
    Ok(-m / (steps as f64 * dt))
}

/// Estimates c by the requested methods in order.
pub fn critical_value(model: &ControlModel, methods: &[CriticalMethod], params: &CriticalParams) -> Result<CriticalData> {
    if methods.is_empty() {
        return Err(Error::Config("no critical-value method requested".into()));
    }
    let mut estimates = Vec::new();
    let mut lp_measure = None;
    for &m in methods {
        let c = match m {
            CriticalMethod::Lp => {
                let p = MatherPolytope::new(model, params.grid, &params.vset, params.dt())?;
                let out = solve_mather_lp(&p)?;
                lp_measure = Some(out.measure);
                -out.value
            }
            CriticalMethod::Discount => discount_estimate(model, params)?,
            CriticalMethod::Longtime => longtime_estimate(model, params)?,
        };
        estimates.push((m, c));
    }
    let spread = (estimates.len() >= 2).then(|| {
        let hi = estimates.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        let lo = estimates.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
        hi - lo
    });
    Ok(CriticalData { c: estimates[0].1, method: methods[0], estimates, spread, lp_measure })
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
    fn one_step_reaches_a_band() {
        let m = mech("0");
        let g = PeriodicGrid::new(1, 32).unwrap();
        let vs = velocity_set(2.0, 9, 1).unwrap();
        let dt = 2.0 / 32.0;
        let h1 = min_action_step(&m, &BarrierMatrix::initial(g), dt, &vs).unwrap();
        assert_eq!(h1.time(), BarrierTime::Elapsed(dt));
        assert_eq!(h1.value(5, 5), 0.0);
        assert!(h1.value(5, 7) < BIG && h1.value(5, 9) < BIG);
        assert_eq!(h1.value(5, 20), BIG);
    }

    #[test]
    fn steps_compose() {
        let m = mech("cos(1)");
        let g = PeriodicGrid::new(1, 16).unwrap();
        let vs = velocity_set(3.0, 9, 1).unwrap();
        let dt = default_dt(&g, &vs);
        let mut a = BarrierMatrix::initial(g);
        for _ in 0..7 {
            a = min_action_step(&m, &a, dt, &vs).unwrap();
        }
        let b = ActionDp::new(&m, g, &vs, dt).unwrap().run(7, |_, _| {});
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-9);
        }
        let lo = -1.0 * 7.0 * dt;
        assert!(b.values().iter().all(|&v| v >= lo - 1e-12));
    }

    #[test]
    fn binary_round_trip() {
        let g = PeriodicGrid::new(1, 4).unwrap();
        let vals: Vec<f64> = (0..16).map(|k| k as f64 * 0.5 - 3.0).collect();
        let h = BarrierMatrix::from_values(g, BarrierTime::Peierls, vals).unwrap();
        let mut buf = Vec::new();
        h.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PBAR");
        assert_eq!(buf.len(), 16 + 16 * 8);
        assert_eq!(BarrierMatrix::read_binary(&buf[..]).unwrap(), h);
    }

    #[test]
    fn cosine_barrier_vanishes_at_the_maximum() {
        let m = mech("cos(1)");
        let g = PeriodicGrid::new(1, 32).unwrap();
        let vs = velocity_set(3.0, 17, 1).unwrap();
        let dt = default_dt(&g, &vs);
        let h = peierls_barrier(&m, g, 1.0, &BarrierParams::default(), dt, &vs).unwrap();
        assert!(h.value(0, 0).abs() < 1e-9);
        assert!(h.warnings().is_empty(), "{:?}", h.warnings());
        assert_eq!(aubry_set(&h, 0.03).nodes, vec![0, 1, 31]);
        assert_eq!(aubry_set(&h, 1e-9).nodes, vec![0]);
        let col = solution_from_barrier(&h, 0);
        assert_eq!(col.argmin(), 0);
        assert!(critical_residual(&m, &col, &vs, dt, 1.0).unwrap() < 1e-6);
        let all: Vec<_> = (0..32).flat_map(|x| (0..32).flat_map(move |y| (0..32).map(move |z| (x, y, z)))).collect();
        assert!(h.triangle_defect(&all) < 1e-6);
    }

    #[test]
    fn wrong_constant_triggers_the_drift_warning() {
        let m = mech("cos(1)");
        let g = PeriodicGrid::new(1, 16).unwrap();
        let vs = velocity_set(3.0, 9, 1).unwrap();
        let dt = default_dt(&g, &vs);
        let h = peierls_barrier(&m, g, 0.9, &BarrierParams::default(), dt, &vs).unwrap();
        assert!(h.warnings().iter().any(|w| w.contains("increase Tmax")));
    }

    #[test]
    fn free_particle_critical_value() {
        let m = mech("0");
        let g = PeriodicGrid::new(1, 32).unwrap();
        let p = CriticalParams::new(g, velocity_set(2.0, 9, 1).unwrap());
        let c = critical_value(&m, &[CriticalMethod::Lp, CriticalMethod::Longtime], &p).unwrap();
        assert!(c.c.abs() < 1e-6);
        assert!(c.spread.unwrap() < 1e-6);
    }
}
