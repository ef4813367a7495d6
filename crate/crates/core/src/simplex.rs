//! Two-phase revised simplex for equality-form linear programs
//! `min cᵀx  s.t.  A x = b, x ≥ 0` with sparse columns and a dense basis inverse.
//!
//! Pricing is Dantzig's rule; after a run of degenerate pivots it falls back to
//! Bland's rule until the objective moves again, so pivoting is deterministic
//! and cycling is excluded. Artificial variables of rows with zero right-hand
//! side are fixed at zero from the start, which shortens phase one on the
//! highly degenerate closedness systems this crate builds.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-10;
const DEGENERATE_STREAK: usize = 50;

#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    rows: usize,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    col_start: Vec<usize>,
    row_idx: Vec<u32>,
    vals: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LpOptions {
    pub max_iter: Option<usize>,
    pub refactor_every: usize,
    pub feas_tol: f64,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self { max_iter: None, refactor_every: 64, feas_tol: 1e-9 }
    }
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Basic variable per row; indices ≥ `cols` are artificials.
    pub basis: Vec<usize>,
    pub reduced_costs: Vec<f64>,
    pub duals: Vec<f64>,
    pub iterations: usize,
    binv: Vec<f64>,
    xb: Vec<f64>,
}

impl LinearProgram {
    pub fn new(rhs: Vec<f64>) -> Self {
        Self { rows: rhs.len(), rhs, cost: Vec::new(), col_start: vec![0], row_idx: Vec::new(), vals: Vec::new() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cost.len()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn cost(&self) -> &[f64] {
        &self.cost
    }

    pub fn set_cost(&mut self, cost: Vec<f64>) {
        assert_eq!(cost.len(), self.cost.len());
        self.cost = cost;
    }

    /// Appends a column given as (row, value) pairs; duplicate rows are summed.
    pub fn add_column(&mut self, cost: f64, entries: &[(usize, f64)]) -> usize {
        let start = self.row_idx.len();
        for &(r, v) in entries {
            assert!(r < self.rows, "row {r} out of range");
            if v == 0.0 {
                continue;
            }
            match self.row_idx[start..].iter().position(|&q| q as usize == r) {
                Some(k) => self.vals[start + k] += v,
                None => {
                    self.row_idx.push(r as u32);
                    self.vals.push(v);
                }
            }
        }
        self.col_start.push(self.row_idx.len());
        self.cost.push(cost);
        self.cost.len() - 1
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.col_start[j], self.col_start[j + 1]);
        self.row_idx[a..b].iter().map(|&r| r as usize).zip(self.vals[a..b].iter().copied())
    }

    /// A x − b.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.rhs.iter().map(|b| -b).collect();
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                for (i, a) in self.column(j) {
                    r[i] += a * xj;
                }
            }
        }
        r
    }

    pub fn solve(&self) -> Result<LpSolution> {
        self.solve_with(&LpOptions::default())
    }

    pub fn solve_with(&self, opts: &LpOptions) -> Result<LpSolution> {
        Solver::new(self, opts).run()
    }

    /// True if some nonbasic column with zero reduced cost can enter the basis
    /// with a strictly positive step, i.e. the optimum is not unique.
    pub fn has_alternative_optimum(&self, sol: &LpSolution, rc_tol: f64, step_tol: f64) -> bool {
        let m = self.rows;
        let mut basic = vec![false; self.cols()];
        for &b in &sol.basis {
            if b < self.cols() {
                basic[b] = true;
            }
        }
        let mut d = vec![0.0; m];
        for j in 0..self.cols() {
            if basic[j] || sol.reduced_costs[j].abs() > rc_tol {
                continue;
            }
            direction(&sol.binv, m, self.column(j), &mut d);
            let mut theta = f64::INFINITY;
            for i in 0..m {
                let fixed = sol.basis[i] >= self.cols();
                if fixed {
                    if d[i].abs() > PIVOT_TOL {
                        theta = 0.0;
                        break;
                    }
                } else if d[i] > PIVOT_TOL {
                    theta = theta.min(sol.xb[i].max(0.0) / d[i]);
                }
            }
            if theta > step_tol {
                return true;
            }
        }
        false
    }
}

fn direction<'a>(binv: &[f64], m: usize, col: impl Iterator<Item = (usize, f64)>, out: &mut [f64]) {
    out.fill(0.0);
    for (r, a) in col {
        for i in 0..m {
            out[i] += binv[i * m + r] * a;
        }
    }
}

struct Solver<'a> {
    lp: &'a LinearProgram,
    opts: &'a LpOptions,
    m: usize,
    n: usize,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    // artificial r has column art_sign[r]·e_r
    art_sign: Vec<f64>,
    // fixed at zero while basic
    art_fixed: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

impl<'a> Solver<'a> {
    fn new(lp: &'a LinearProgram, opts: &'a LpOptions) -> Self {
        let m = lp.rows;
        let n = lp.cols();
        let art_sign: Vec<f64> = lp.rhs.iter().map(|&b| if b < 0.0 { -1.0 } else { 1.0 }).collect();
        let mut binv = vec![0.0; m * m];
        for r in 0..m {
            binv[r * m + r] = art_sign[r];
        }
        let xb = lp.rhs.iter().map(|b| b.abs()).collect();
        let art_fixed = lp.rhs.iter().map(|&b| b == 0.0).collect();
        Self {
            lp,
            opts,
            m,
            n,
            basis: (n..n + m).collect(),
            is_basic: vec![false; n],
            art_sign,
            art_fixed,
            binv,
            xb,
            iterations: 0,
            since_refactor: 0,
        }
    }

    fn col_entries(&self, j: usize) -> Vec<(usize, f64)> {
        if j < self.n {
            self.lp.column(j).collect()
        } else {
            vec![(j - self.n, self.art_sign[j - self.n])]
        }
    }

    fn is_fixed(&self, var: usize) -> bool {
        var >= self.n && self.art_fixed[var - self.n]
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        // Gauss–Jordan on [B | I]
        let mut b = vec![0.0; m * m];
        for (k, &var) in self.basis.iter().enumerate() {
            for (r, a) in self.col_entries(var) {
                b[r * m + k] = a;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for c in 0..m {
            let mut p = c;
            let mut best = b[c * m + c].abs();
            for r in c + 1..m {
                let v = b[r * m + c].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best < 1e-13 {
                return Err(Error::Lp("singular basis during refactorization".into()));
            }
            if p != c {
                for k in 0..m {
                    b.swap(c * m + k, p * m + k);
                    inv.swap(c * m + k, p * m + k);
                }
            }
            let piv = b[c * m + c];
            for k in 0..m {
                b[c * m + k] /= piv;
                inv[c * m + k] /= piv;
            }
            for r in 0..m {
                if r == c {
                    continue;
                }
                let f = b[r * m + c];
                if f != 0.0 {
                    for k in 0..m {
                        b[r * m + k] -= f * b[c * m + k];
                        inv[r * m + k] -= f * inv[c * m + k];
                    }
                }
            }
        }
        self.binv = inv;
        for i in 0..m {
            let mut s = 0.0;
            for r in 0..m {
                s += self.binv[i * m + r] * self.lp.rhs[r];
            }
            self.xb[i] = s;
        }
        self.since_refactor = 0;
        Ok(())
    }

    fn duals(&self, cb: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for i in 0..m {
            let c = cb[i];
            if c != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for r in 0..m {
                    y[r] += c * row[r];
                }
            }
        }
        y
    }

    fn reduced_cost(&self, cost: &[f64], y: &[f64], j: usize) -> f64 {
        let mut r = cost[j];
        for (i, a) in self.lp.column(j) {
            r -= y[i] * a;
        }
        r
    }

    /// Runs simplex iterations for the given structural cost and artificial cost.
    fn optimize(&mut self, cost: &[f64], art_cost: f64) -> Result<()> {
        let m = self.m;
        let max_iter = self.opts.max_iter.unwrap_or(50 * (self.m + self.n) + 10_000);
        let mut d = vec![0.0; m];
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= max_iter {
                return Err(Error::Lp(format!("iteration limit {max_iter} reached")));
            }
            let cb: Vec<f64> = self
                .basis
                .iter()
                .map(|&v| if v < self.n { cost[v] } else if self.is_fixed(v) { 0.0 } else { art_cost })
                .collect();
            let y = self.duals(&cb);
            let bland = degenerate >= DEGENERATE_STREAK;
            let scale = 1.0 + cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
            let tol = OPT_TOL * scale;
            let mut entering = None;
            let mut best = -tol;
            for j in 0..self.n {
                if self.is_basic[j] {
                    continue;
                }
                let r = self.reduced_cost(cost, &y, j);
                if r < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = r;
                }
            }
            let Some(q) = entering else { return Ok(()) };
            direction(&self.binv, m, self.lp.column(q), &mut d);
            let mut leave: Option<usize> = None;
            let mut theta = f64::INFINITY;
            for i in 0..m {
                let var = self.basis[i];
                let ratio = if self.is_fixed(var) {
                    if d[i].abs() > PIVOT_TOL {
                        0.0
                    } else {
                        continue;
                    }
                } else if d[i] > PIVOT_TOL {
                    self.xb[i].max(0.0) / d[i]
                } else {
                    continue;
                };
                let better = match leave {
                    None => true,
                    Some(l) => {
                        let tie = (ratio - theta).abs() <= 1e-12 * (1.0 + theta.abs());
                        if tie {
                            if bland {
                                var < self.basis[l]
                            } else {
                                d[i].abs() > d[l].abs()
                            }
                        } else {
                            ratio < theta
                        }
                    }
                };
                if better {
                    leave = Some(i);
                    theta = ratio;
                }
            }
            let Some(r) = leave else {
                return Err(Error::Lp("unbounded objective".into()));
            };
            if theta > 0.0 {
                degenerate = 0;
            } else {
                degenerate += 1;
            }
            self.pivot(r, q, theta, &d);
            self.iterations += 1;
            self.since_refactor += 1;
            if self.since_refactor >= self.opts.refactor_every.max(1) {
                self.refactor()?;
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize, theta: f64, d: &[f64]) {
        let m = self.m;
        for i in 0..m {
            if i != r {
                self.xb[i] -= theta * d[i];
            }
        }
        self.xb[r] = theta;
        let piv = d[r];
        {
            let row = &mut self.binv[r * m..(r + 1) * m];
            for v in row.iter_mut() {
                *v /= piv;
            }
        }
        let pivot_row: Vec<f64> = self.binv[r * m..(r + 1) * m].to_vec();
        for i in 0..m {
            if i == r || d[i] == 0.0 {
                continue;
            }
            let f = d[i];
            let row = &mut self.binv[i * m..(i + 1) * m];
            for k in 0..m {
                row[k] -= f * pivot_row[k];
            }
        }
        let old = self.basis[r];
        if old < self.n {
            self.is_basic[old] = false;
        }
        self.basis[r] = q;
        self.is_basic[q] = true;
    }

    fn run(mut self) -> Result<LpSolution> {
        let scale_b = 1.0 + self.lp.rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let needs_phase1 = self.art_fixed.iter().any(|f| !f);
        if needs_phase1 {
            let zero = vec![0.0; self.n];
            self.optimize(&zero, 1.0)?;
            self.refactor()?;
            let infeas: f64 = self
                .basis
                .iter()
                .zip(&self.xb)
                .filter(|(&v, _)| v >= self.n)
                .map(|(_, x)| x.abs())
                .sum();
            if infeas > self.opts.feas_tol * scale_b {
                return Err(Error::Infeasible(format!("phase one ended with infeasibility {infeas:.3e}")));
            }
        }
        self.art_fixed.iter_mut().for_each(|f| *f = true);
        let cost = self.lp.cost.clone();
        self.optimize(&cost, 0.0)?;
        self.refactor()?;
        let mut x = vec![0.0; self.n];
        for (i, &v) in self.basis.iter().enumerate() {
            if v < self.n {
                let val = self.xb[i];
                x[v] = if val < 0.0 && val > -self.opts.feas_tol * scale_b { 0.0 } else { val };
            }
        }
        if let Some(v) = x.iter().find(|&&v| v < 0.0) {
            return Err(Error::Lp(format!("final basic solution infeasible (component {v:.3e})")));
        }
        let cb: Vec<f64> = self.basis.iter().map(|&v| if v < self.n { cost[v] } else { 0.0 }).collect();
        let duals = self.duals(&cb);
        let reduced_costs = (0..self.n).map(|j| self.reduced_cost(&cost, &duals, j)).collect();
        let objective = x.iter().zip(&cost).map(|(a, b)| a * b).sum();
        Ok(LpSolution {
            x,
            objective,
            basis: self.basis,
            reduced_costs,
            duals,
            iterations: self.iterations,
            binv: self.binv,
            xb: self.xb,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_textbook_problem() {
        // max 3x + 5y s.t. x ≤ 4, 2y ≤ 12, 3x + 2y ≤ 18 (slacks s1..s3)
        let mut lp = LinearProgram::new(vec![4.0, 12.0, 18.0]);
        lp.add_column(-3.0, &[(0, 1.0), (2, 3.0)]);
        lp.add_column(-5.0, &[(1, 2.0), (2, 2.0)]);
        for r in 0..3 {
            lp.add_column(0.0, &[(r, 1.0)]);
        }
        let s = lp.solve().unwrap();
        assert!((s.objective + 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
        assert!(s.reduced_costs.iter().all(|&r| r > -1e-9));
    }

    #[test]
    fn detects_infeasibility_and_negative_rhs() {
        let mut lp = LinearProgram::new(vec![1.0, -1.0]);
        lp.add_column(1.0, &[(0, 1.0), (1, 1.0)]);
        assert!(matches!(lp.solve(), Err(Error::Infeasible(_))));
        let mut ok = LinearProgram::new(vec![-2.0]);
        ok.add_column(1.0, &[(0, -1.0)]);
        ok.add_column(3.0, &[(0, -2.0)]);
        let s = ok.solve().unwrap();
        assert!((s.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_column(-1.0, &[(0, 1.0)]);
        lp.add_column(-1.0, &[(0, 1.0)]);
        lp.add_column(0.0, &[(0, -1.0)]);
        lp.add_column(-1.0, &[(0, -1.0)]);
        assert!(matches!(lp.solve(), Err(Error::Lp(_))));
    }

    #[test]
    fn alternative_optimum_flag() {
        // min x + y s.t. x + y = 1: every point of the segment is optimal
        let mut lp = LinearProgram::new(vec![1.0]);
        lp.add_column(1.0, &[(0, 1.0)]);
        lp.add_column(1.0, &[(0, 1.0)]);
        let s = lp.solve().unwrap();
        assert!(lp.has_alternative_optimum(&s, 1e-9, 1e-9));
        let mut uniq = LinearProgram::new(vec![1.0]);
        uniq.add_column(1.0, &[(0, 1.0)]);
        uniq.add_column(2.0, &[(0, 1.0)]);
        let s = uniq.solve().unwrap();
        assert!(!uniq.has_alternative_optimum(&s, 1e-9, 1e-9));
    }

    #[test]
    fn degenerate_transport_problem() {
        // 3x3 assignment relaxation, highly degenerate
        let costs = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let mut lp = LinearProgram::new(vec![1.0; 6]);
        for i in 0..3 {
            for j in 0..3 {
                lp.add_column(costs[i][j], &[(i, 1.0), (3 + j, 1.0)]);
            }
        }
        let s = lp.solve().unwrap();
        assert!((s.objective - 5.0).abs() < 1e-9, "{}", s.objective);
        assert!(lp.residual(&s.x).iter().all(|r| r.abs() < 1e-12));
    }
}
