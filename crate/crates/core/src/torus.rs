//! Periodic grids on the flat torus T^d (d = 1 or 2), point wrapping and
//! multilinear interpolation.
//!
//! Nodes are indexed lexicographically, row-major on d = 2: node `(i0, i1)`
//! has flat index `i0 * n + i1` and coordinates `(i0 / n, i1 / n)`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DIM: usize = 2;

/// A point of T^d with every coordinate in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusPoint {
    dim: usize,
    coords: [f64; MAX_DIM],
}

#[inline]
fn wrap_coord(c: f64) -> f64 {
    let r = c.rem_euclid(1.0);
    // rem_euclid rounds tiny negatives up to exactly 1.0
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Reduces every coordinate modulo 1.
pub fn wrap_point(x: &[f64]) -> Result<TorusPoint> {
    if x.is_empty() || x.len() > MAX_DIM {
        return Err(Error::Domain(format!("points must have 1 or 2 coordinates, got {}", x.len())));
    }
    if let Some(c) = x.iter().find(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("non-finite coordinate {c}")));
    }
    let mut coords = [0.0; MAX_DIM];
    for (dst, &c) in coords.iter_mut().zip(x) {
        *dst = wrap_coord(c);
    }
    Ok(TorusPoint { dim: x.len(), coords })
}

impl TorusPoint {
    pub fn new(x: &[f64]) -> Result<Self> {
        wrap_point(x)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    /// The point `self + delta`, wrapped. `delta` must be finite.
    #[inline]
    pub fn translate(&self, delta: &[f64]) -> TorusPoint {
        let mut coords = [0.0; MAX_DIM];
        for a in 0..self.dim {
            coords[a] = wrap_coord(self.coords[a] + delta[a]);
        }
        TorusPoint { dim: self.dim, coords }
    }

    /// Euclidean distance on the torus.
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        self.coords()
            .iter()
            .zip(other.coords())
            .map(|(a, b)| {
                let d = (a - b).abs();
                let d = d.min(1.0 - d);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Uniform periodic grid with `n` nodes per axis and spacing `1/n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeriodicGrid {
    dim: usize,
    n: usize,
}

pub fn build_grid(d: usize, n: usize) -> Result<PeriodicGrid> {
    PeriodicGrid::new(d, n)
}

impl PeriodicGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Config(format!("unsupported dimension {dim}; expected 1 or 2")));
        }
        if n < 4 {
            return Err(Error::Config(format!("grid needs at least 4 nodes per axis, got {n}")));
        }
        if n > u32::MAX as usize / 8 {
            return Err(Error::Config(format!("grid size {n} too large")));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total node count n^d.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Euclidean diameter of the torus, sqrt(d)/2.
    pub fn diameter(&self) -> f64 {
        (self.dim as f64).sqrt() / 2.0
    }

    pub fn multi_index(&self, i: usize) -> [usize; MAX_DIM] {
        match self.dim {
            1 => [i, 0],
            _ => [i / self.n, i % self.n],
        }
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        match self.dim {
            1 => idx[0] % self.n,
            _ => (idx[0] % self.n) * self.n + idx[1] % self.n,
        }
    }

    pub fn coords(&self, i: usize) -> [f64; MAX_DIM] {
        let m = self.multi_index(i);
        let h = self.spacing();
        [m[0] as f64 * h, m[1] as f64 * h]
    }

    pub fn node(&self, i: usize) -> TorusPoint {
        TorusPoint { dim: self.dim, coords: self.coords(i) }
    }

    pub fn nodes(&self) -> impl Iterator<Item = TorusPoint> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    pub fn nearest_node(&self, x: &TorusPoint) -> usize {
        let mut idx = [0usize; MAX_DIM];
        for a in 0..self.dim {
            idx[a] = ((x.coords[a] * self.n as f64).round() as usize) % self.n;
        }
        self.flat_index(&idx[..self.dim])
    }

    /// Largest per-axis periodic index distance between two nodes.
    pub fn cell_distance(&self, i: usize, j: usize) -> usize {
        let (a, b) = (self.multi_index(i), self.multi_index(j));
        (0..self.dim)
            .map(|k| {
                let d = a[k].abs_diff(b[k]);
                d.min(self.n - d)
            })
            .max()
            .unwrap_or(0)
    }

    /// Neighbour of node `i` shifted by `step` along `axis`, periodically.
    pub fn neighbor(&self, i: usize, axis: usize, step: isize) -> usize {
        let mut m = self.multi_index(i);
        m[axis] = (m[axis] as isize + step).rem_euclid(self.n as isize) as usize;
        self.flat_index(&m[..self.dim])
    }

    /// Nodes and multilinear weights of the cell containing `x`.
    pub fn interpolation_weights(&self, x: &TorusPoint) -> Corners {
        let mut base = [0usize; MAX_DIM];
        let mut theta = [0.0; MAX_DIM];
        for a in 0..self.dim {
            let g = x.coords[a] * self.n as f64;
            let k = g.floor();
            theta[a] = g - k;
            base[a] = (k as usize) % self.n;
        }
        Corners::new(self, base, theta)
    }
}

/// Up to four (node, weight) pairs from a multilinear interpolation cell.
#[derive(Clone, Copy, Debug)]
pub struct Corners {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
    pub len: usize,
}

impl Corners {
    fn new(grid: &PeriodicGrid, base: [usize; MAX_DIM], theta: [f64; MAX_DIM]) -> Self {
        let n = grid.n;
        match grid.dim {
            1 => Corners {
                nodes: [base[0], (base[0] + 1) % n, 0, 0],
                weights: [1.0 - theta[0], theta[0], 0.0, 0.0],
                len: 2,
            },
            _ => {
                let (i0, i1) = (base[0], base[1]);
                let (j0, j1) = ((i0 + 1) % n, (i1 + 1) % n);
                let (t0, t1) = (theta[0], theta[1]);
                Corners {
                    nodes: [i0 * n + i1, i0 * n + j1, j0 * n + i1, j0 * n + j1],
                    weights: [(1.0 - t0) * (1.0 - t1), (1.0 - t0) * t1, t0 * (1.0 - t1), t0 * t1],
                    len: 4,
                }
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes[..self.len].iter().copied().zip(self.weights[..self.len].iter().copied())
    }
}

/// One real value per grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite field value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn constant(grid: PeriodicGrid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(&TorusPoint) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().map(|x| f(&x)).collect())
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn interpolate(&self, x: &TorusPoint) -> f64 {
        interpolate(self, x)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn argmin(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v < self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn sup_distance(&self, other: &GridField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> GridField {
        GridField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn shifted(&self, k: f64) -> GridField {
        self.map(|v| v + k)
    }

    /// Largest difference quotient between adjacent nodes.
    pub fn lipschitz_constant(&self) -> f64 {
        let h = self.grid.spacing();
        let mut lip: f64 = 0.0;
        for i in 0..self.values.len() {
            for a in 0..self.grid.dim {
                let j = self.grid.neighbor(i, a, 1);
                lip = lip.max((self.values[j] - self.values[i]).abs() / h);
            }
        }
        lip
    }

    /// Sum over axes of the largest absolute second difference.
    pub fn max_second_difference(&self) -> f64 {
        (0..self.grid.dim)
            .map(|a| {
                (0..self.values.len())
                    .map(|i| {
                        let l = self.grid.neighbor(i, a, -1);
                        let r = self.grid.neighbor(i, a, 1);
                        (self.values[l] - 2.0 * self.values[i] + self.values[r]).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .sum()
    }

    /// `# d,n` header, then `index,coord...,value` per node with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# {},{}", self.grid.dim, self.grid.n)?;
        for (i, v) in self.values.iter().enumerate() {
            let c = self.grid.coords(i);
            write!(w, "{i}")?;
            for x in &c[..self.grid.dim] {
                write!(w, ",{}", fmt17(*x))?;
            }
            writeln!(w, ",{}", fmt17(*v))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

/// 17 significant digits in scientific notation.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Periodic multilinear interpolation of `f` at `x`.
pub fn interpolate(f: &GridField, x: &TorusPoint) -> f64 {
    let grid = &f.grid;
    let n = grid.n;
    let v = &f.values;
    let mut base = [0usize; MAX_DIM];
    let mut theta = [0.0; MAX_DIM];
    for a in 0..grid.dim {
        let g = x.coords[a] * n as f64;
        let k = g.floor();
        theta[a] = g - k;
        base[a] = (k as usize) % n;
    }
    match grid.dim {
        1 => lerp(v[base[0]], v[(base[0] + 1) % n], theta[0]),
        _ => {
            let (i0, i1) = (base[0], base[1]);
            let (j0, j1) = ((i0 + 1) % n, (i1 + 1) % n);
            let a = lerp(v[i0 * n + i1], v[i0 * n + j1], theta[1]);
            let b = lerp(v[j0 * n + i1], v[j0 * n + j1], theta[1]);
            lerp(a, b, theta[0])
        }
    }
}

#[inline(always)]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Interpolation at `x_i + shift_s` for every node `i` and a fixed list of shifts.
///
/// The cell offset and fractional weights of a translate do not depend on the
/// node, so they are computed once per shift.
#[derive(Clone, Debug)]
pub(crate) struct ShiftStencil {
    grid: PeriodicGrid,
    shifts: usize,
    theta: Vec<[f64; MAX_DIM]>,
    // shifts x nodes x corners
    index: Vec<u32>,
}

impl ShiftStencil {
    pub fn new(grid: PeriodicGrid, shifts: &[[f64; MAX_DIM]]) -> Self {
        let n = grid.n as isize;
        let nodes = grid.len();
        let corners = 1 << grid.dim;
        let mut theta = Vec::with_capacity(shifts.len());
        let mut index = Vec::with_capacity(shifts.len() * nodes * corners);
        for s in shifts {
            let mut off = [0isize; MAX_DIM];
            let mut th = [0.0; MAX_DIM];
            for a in 0..grid.dim {
                let g = s[a] * grid.n as f64;
                let k = g.floor();
                th[a] = g - k;
                off[a] = k as isize;
            }
            theta.push(th);
            for i in 0..nodes {
                let m = grid.multi_index(i);
                let b0 = (m[0] as isize + off[0]).rem_euclid(n) as usize;
                let c0 = (b0 + 1) % grid.n;
                if grid.dim == 1 {
                    index.push(b0 as u32);
                    index.push(c0 as u32);
                } else {
                    let b1 = (m[1] as isize + off[1]).rem_euclid(n) as usize;
                    let c1 = (b1 + 1) % grid.n;
                    let g = grid.n;
                    index.extend_from_slice(&[
                        (b0 * g + b1) as u32,
                        (b0 * g + c1) as u32,
                        (c0 * g + b1) as u32,
                        (c0 * g + c1) as u32,
                    ]);
                }
            }
        }
        Self { grid, shifts: shifts.len(), theta, index }
    }

    #[cfg(test)]
    pub fn eval(&self, s: usize, f: &[f64], i: usize) -> f64 {
        let nodes = self.grid.len();
        let th = self.theta[s];
        if self.grid.dim == 1 {
            let k = (s * nodes + i) * 2;
            lerp(f[self.index[k] as usize], f[self.index[k + 1] as usize], th[0])
        } else {
            let k = (s * nodes + i) * 4;
            let ix = &self.index[k..k + 4];
            let a = lerp(f[ix[0] as usize], f[ix[1] as usize], th[1]);
            let b = lerp(f[ix[2] as usize], f[ix[3] as usize], th[1]);
            lerp(a, b, th[0])
        }
    }

    /// Nodes and weights of the interpolation at `x_i + shift_s`.
    pub fn corners(&self, s: usize, i: usize) -> Corners {
        let nodes = self.grid.len();
        let th = self.theta[s];
        if self.grid.dim == 1 {
            let k = (s * nodes + i) * 2;
            Corners {
                nodes: [self.index[k] as usize, self.index[k + 1] as usize, 0, 0],
                weights: [1.0 - th[0], th[0], 0.0, 0.0],
                len: 2,
            }
        } else {
            let k = (s * nodes + i) * 4;
            let ix = &self.index[k..k + 4];
            let (t0, t1) = (th[0], th[1]);
            Corners {
                nodes: [ix[0] as usize, ix[1] as usize, ix[2] as usize, ix[3] as usize],
                weights: [(1.0 - t0) * (1.0 - t1), (1.0 - t0) * t1, t0 * (1.0 - t1), t0 * t1],
                len: 4,
            }
        }
    }

    /// `out[i] = min_s (interp_s(f)(i) + cost[s * N + i])`, first minimizing `s` kept in `arg`.
    pub fn min_plus(&self, f: &[f64], cost: &[f64], out: &mut [f64], arg: &mut [u32]) {
        let nodes = self.grid.len();
        out.fill(f64::INFINITY);
        arg.fill(0);
        for s in 0..self.shifts {
            let th = self.theta[s];
            let c = &cost[s * nodes..(s + 1) * nodes];
            if self.grid.dim == 1 {
                let ix = &self.index[s * nodes * 2..(s + 1) * nodes * 2];
                let t = th[0];
                for i in 0..nodes {
                    let a = f[ix[2 * i] as usize];
                    let b = f[ix[2 * i + 1] as usize];
                    let val = a + t * (b - a) + c[i];
                    if val < out[i] {
                        out[i] = val;
                        arg[i] = s as u32;
                    }
                }
            } else {
                let ix = &self.index[s * nodes * 4..(s + 1) * nodes * 4];
                for i in 0..nodes {
                    let q = &ix[4 * i..4 * i + 4];
                    let a = lerp(f[q[0] as usize], f[q[1] as usize], th[1]);
                    let b = lerp(f[q[2] as usize], f[q[3] as usize], th[1]);
                    let val = lerp(a, b, th[0]) + c[i];
                    if val < out[i] {
                        out[i] = val;
                        arg[i] = s as u32;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_point(&[1.25]).unwrap().coords(), &[0.25]);
        assert!((wrap_point(&[-0.1]).unwrap().coords()[0] - 0.9).abs() < 1e-15);
        assert_eq!(wrap_point(&[0.0, 2.0]).unwrap().coords(), &[0.0, 0.0]);
        assert_eq!(wrap_point(&[-1e-18]).unwrap().coords(), &[0.0]);
        assert!(matches!(wrap_point(&[f64::NAN]), Err(Error::Domain(_))));
        assert!(wrap_point(&[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn grid_construction() {
        let g = build_grid(1, 8).unwrap();
        let xs: Vec<f64> = g.nodes().map(|p| p.coords()[0]).collect();
        assert_eq!(xs, vec![0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875]);
        let g2 = build_grid(2, 4).unwrap();
        assert_eq!(g2.len(), 16);
        assert_eq!(g2.coords(6), [0.25, 0.5]);
        assert!(matches!(build_grid(3, 8), Err(Error::Config(_))));
        assert!(matches!(build_grid(1, 3), Err(Error::Config(_))));
    }

    #[test]
    fn interpolation_examples() {
        let g = build_grid(1, 4).unwrap();
        let f = GridField::new(g, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(interpolate(&f, &wrap_point(&[0.125]).unwrap()), 0.5);
        let c = GridField::constant(build_grid(2, 5).unwrap(), 2.75);
        assert_eq!(c.interpolate(&wrap_point(&[0.31, 0.77]).unwrap()), 2.75);
    }

    #[test]
    fn interpolation_of_sine_is_second_order_accurate() {
        let g = build_grid(1, 256).unwrap();
        let f = GridField::from_fn(g, |x| (2.0 * std::f64::consts::PI * x.coords()[0]).sin()).unwrap();
        let got = f.interpolate(&wrap_point(&[0.3]).unwrap());
        assert!((got - (0.6 * std::f64::consts::PI).sin()).abs() < 1e-3);
    }

    #[test]
    fn bilinear_is_exact_on_affine_cells() {
        let g = build_grid(2, 8).unwrap();
        let f = GridField::from_fn(g, |x| {
            let c = x.coords();
            1.0 + 2.0 * c[0] - 3.0 * c[1]
        })
        .unwrap();
        let x = wrap_point(&[0.3, 0.4]).unwrap();
        assert!((f.interpolate(&x) - (1.0 + 0.6 - 1.2)).abs() < 1e-14);
    }

    #[test]
    fn stencil_matches_pointwise_interpolation() {
        for d in 1..=2 {
            let g = build_grid(d, 9).unwrap();
            let f = GridField::from_fn(g, |x| x.coords().iter().map(|c| (7.0 * c).sin()).sum()).unwrap();
            let shifts = [[0.013, -0.04], [-0.2, 0.0], [0.0, 0.0]];
            let st = ShiftStencil::new(g, &shifts);
            for (s, sh) in shifts.iter().enumerate() {
                for i in 0..g.len() {
                    let x = g.node(i).translate(&sh[..d]);
                    assert!((st.eval(s, f.values(), i) - f.interpolate(&x)).abs() < 1e-13);
                    let c = st.corners(s, i);
                    let via: f64 = c.iter().map(|(k, w)| w * f.value(k)).sum();
                    assert!((via - f.interpolate(&x)).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn csv_layout() {
        let g = build_grid(1, 4).unwrap();
        let f = GridField::new(g, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
        let s = f.to_csv_string();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# 1,4");
        assert_eq!(lines[2], "1,2.5000000000000000e-1,1.0000000000000000e0");
        assert_eq!(lines.len(), 5);
    }
}
