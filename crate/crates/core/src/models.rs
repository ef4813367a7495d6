//! Hamiltonian/Lagrangian pairs with their u-derivative data and potentials.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::profile::Profile;
use crate::torus::{PeriodicGrid, TorusPoint, MAX_DIM};

pub const DEFAULT_P_BOX: f64 = 6.0;
pub const DEFAULT_FENCHEL_SAMPLES: usize = 129;

/// A user-supplied Hamiltonian. The Lagrangian is obtained by the numeric
/// Fenchel transform; `dl_du0` must be analytic.
pub trait CustomHamiltonian: Send + Sync {
    fn dim(&self) -> usize;
    fn hamiltonian(&self, x: &[f64], p: &[f64], u: f64) -> f64;
    /// ∂L/∂u(x, v, 0).
    fn dl_du0(&self, x: &[f64], v: &[f64]) -> f64;
    /// ∂H/∂u(x, p, 0).
    fn dh_du0(&self, x: &[f64], p: &[f64]) -> f64;
    fn sigma(&self, _x: &[f64]) -> f64 {
        1.0
    }
    fn name(&self) -> String {
        "custom".to_string()
    }
}

#[derive(Clone)]
pub enum ModelKind {
    /// H = σ(x) u + ½|p|² + U(x).
    Mechanical { potential_u: Profile, sigma: Profile },
    /// H = u + ½|p + α|².
    ShiftedQuadratic { alpha: [f64; MAX_DIM] },
    /// H = arctan(u) + |p|².
    ArctanDiscount,
    Custom(Arc<dyn CustomHamiltonian>),
}

impl fmt::Debug for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Mechanical { potential_u, sigma } => {
                write!(f, "Mechanical {{ U: {potential_u}, sigma: {sigma} }}")
            }
            ModelKind::ShiftedQuadratic { alpha } => write!(f, "ShiftedQuadratic {{ alpha: {alpha:?} }}"),
            ModelKind::ArctanDiscount => write!(f, "ArctanDiscount"),
            ModelKind::Custom(h) => write!(f, "Custom({})", h.name()),
        }
    }
}

/// V(x, λ) = base(x) + λ·slope(x).
#[derive(Clone, Debug)]
pub struct Potential {
    pub base: Profile,
    pub slope: Profile,
}

impl Potential {
    pub fn zero() -> Self {
        Self { base: Profile::zero(), slope: Profile::zero() }
    }

    pub fn fixed(base: Profile) -> Self {
        Self { base, slope: Profile::zero() }
    }

    pub fn value(&self, x: &[f64], lambda: f64) -> f64 {
        let b = self.base.value(x);
        if lambda == 0.0 || self.slope.is_zero() {
            b
        } else {
            b + lambda * self.slope.value(x)
        }
    }
}

#[derive(Clone, Debug)]
pub struct ControlModel {
    name: String,
    dim: usize,
    kind: ModelKind,
    potential: Potential,
    c0: f64,
    p_box: f64,
    fenchel_samples: usize,
}

/// Parameters for [`builtin_model`]; unset entries take the model's defaults.
#[derive(Clone, Debug, Default)]
pub struct ModelParams {
    pub dim: Option<usize>,
    /// Mechanical potential U.
    pub potential_u: Option<Profile>,
    pub sigma: Option<Profile>,
    pub alpha: Option<Vec<f64>>,
    /// Perturbation profile φ of the σ-discounted family.
    pub phi: Option<Profile>,
    /// Potential V(·, 0).
    pub v: Option<Profile>,
    /// First-order λ-coefficient of V.
    pub v_slope: Option<Profile>,
}

pub const BUILTIN_MODELS: [&str; 4] = ["mechanical", "shifted_quadratic", "arctan_discount", "sigma_discounted"];

pub fn builtin_model(name: &str, params: &ModelParams) -> Result<ControlModel> {
    let dim = params.dim.unwrap_or(1);
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(Error::Config(format!("unsupported dimension {dim}")));
    }
    let slope = params.v_slope.clone().unwrap_or_else(Profile::zero);
    let (kind, base) = match name {
        "mechanical" => (
            ModelKind::Mechanical {
                potential_u: params.potential_u.clone().unwrap_or_else(Profile::zero),
                sigma: params.sigma.clone().unwrap_or_else(|| Profile::constant(1.0)),
            },
            params.v.clone().unwrap_or_else(Profile::zero),
        ),
        "shifted_quadratic" => {
            let a = params.alpha.clone().unwrap_or_else(|| vec![golden_alpha(); dim]);
            if a.len() != dim {
                return Err(Error::Config(format!("alpha has {} components, model dimension is {dim}", a.len())));
            }
            let mut alpha = [0.0; MAX_DIM];
            alpha[..dim].copy_from_slice(&a);
            (ModelKind::ShiftedQuadratic { alpha }, params.v.clone().unwrap_or_else(Profile::zero))
        }
        "arctan_discount" => (
            ModelKind::ArctanDiscount,
            params.v.clone().unwrap_or_else(|| Profile::constant(FRAC_PI_2)),
        ),
        "sigma_discounted" => {
            let sigma = params.sigma.clone().unwrap_or_else(|| Profile::constant(1.0));
            let phi = params.phi.clone().unwrap_or_else(Profile::zero);
            let base = Profile::product(sigma.clone(), phi).scaled(-1.0);
            (
                ModelKind::Mechanical {
                    potential_u: params.potential_u.clone().unwrap_or_else(Profile::zero),
                    sigma,
                },
                base,
            )
        }
        other => {
            return Err(Error::Config(format!(
                "unknown model `{other}`; available: {}",
                BUILTIN_MODELS.join(", ")
            )))
        }
    };
    let mut model = ControlModel {
        name: name.to_string(),
        dim,
        kind,
        potential: Potential { base, slope },
        c0: 0.0,
        p_box: DEFAULT_P_BOX,
        fenchel_samples: DEFAULT_FENCHEL_SAMPLES,
    };
    model.c0 = model.analytic_critical_value().unwrap_or(0.0);
    model.check_sigma()?;
    Ok(model)
}

/// (√5 − 1)/2.
pub fn golden_alpha() -> f64 {
    (5f64.sqrt() - 1.0) / 2.0
}

impl ControlModel {
    pub fn custom(h: Arc<dyn CustomHamiltonian>, potential: Potential) -> Result<Self> {
        let dim = h.dim();
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Config(format!("unsupported dimension {dim}")));
        }
        Ok(Self {
            name: h.name(),
            dim,
            kind: ModelKind::Custom(h),
            potential,
            c0: 0.0,
            p_box: DEFAULT_P_BOX,
            fenchel_samples: DEFAULT_FENCHEL_SAMPLES,
        })
    }

    fn check_sigma(&self) -> Result<()> {
        if let ModelKind::Mechanical { sigma, .. } = &self.kind {
            let m = sigma.fine_min(self.dim);
            if m <= 0.0 {
                return Err(Error::Model(format!("sigma must be positive, sampled minimum {m}")));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn critical_value(&self) -> f64 {
        self.c0
    }

    pub fn p_box(&self) -> f64 {
        self.p_box
    }

    pub fn fenchel_samples(&self) -> usize {
        self.fenchel_samples
    }

    pub fn with_critical_value(mut self, c0: f64) -> Self {
        self.c0 = c0;
        self
    }

    pub fn with_potential(mut self, potential: Potential) -> Self {
        self.potential = potential;
        self
    }

    pub fn with_fenchel_box(mut self, p_box: f64, samples: usize) -> Self {
        self.p_box = p_box;
        self.fenchel_samples = samples;
        self
    }

    /// Critical value of H(·,·,0) when known in closed form.
    pub fn analytic_critical_value(&self) -> Option<f64> {
        match &self.kind {
            ModelKind::Mechanical { potential_u, .. } => Some(potential_u.fine_max(self.dim)),
            ModelKind::ShiftedQuadratic { alpha } => Some(0.5 * norm2(&alpha[..self.dim])),
            ModelKind::ArctanDiscount => Some(0.0),
            ModelKind::Custom(_) => None,
        }
    }

    pub fn hamiltonian(&self, x: &[f64], p: &[f64], u: f64) -> f64 {
        match &self.kind {
            ModelKind::Mechanical { potential_u, sigma } => {
                sigma.value(x) * u + 0.5 * norm2(p) + potential_u.value(x)
            }
            ModelKind::ShiftedQuadratic { alpha } => {
                let q: f64 = p.iter().zip(alpha).map(|(p, a)| (p + a) * (p + a)).sum();
                u + 0.5 * q
            }
            ModelKind::ArctanDiscount => u.atan() + norm2(p),
            ModelKind::Custom(h) => h.hamiltonian(x, p, u),
        }
    }

    /// L(x, v, u). Custom models use the numeric Fenchel transform; the box
    /// check is skipped here and performed by [`ControlModel::check_invariants`].
    pub fn lagrangian(&self, x: &[f64], v: &[f64], u: f64) -> f64 {
        match &self.kind {
            ModelKind::Mechanical { potential_u, sigma } => {
                0.5 * norm2(v) - potential_u.value(x) - sigma.value(x) * u
            }
            ModelKind::ShiftedQuadratic { alpha } => {
                let av: f64 = v.iter().zip(alpha).map(|(v, a)| v * a).sum();
                0.5 * norm2(v) - av - u
            }
            ModelKind::ArctanDiscount => 0.25 * norm2(v) - u.atan(),
            ModelKind::Custom(_) => fenchel_max(self, x, v, u, self.fenchel_samples).0,
        }
    }

    pub fn lagrangian0(&self, x: &[f64], v: &[f64]) -> f64 {
        self.lagrangian(x, v, 0.0)
    }

    /// ∂L/∂u(x, v, 0).
    pub fn dl_du0(&self, x: &[f64], v: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::Mechanical { sigma, .. } => -sigma.value(x),
            ModelKind::ShiftedQuadratic { .. } | ModelKind::ArctanDiscount => -1.0,
            ModelKind::Custom(h) => h.dl_du0(x, v),
        }
    }

    /// ∂H/∂u(x, p, 0).
    pub fn dh_du0(&self, x: &[f64], p: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::Mechanical { sigma, .. } => sigma.value(x),
            ModelKind::ShiftedQuadratic { .. } | ModelKind::ArctanDiscount => 1.0,
            ModelKind::Custom(h) => h.dh_du0(x, p),
        }
    }

    /// The weight σ(x).
    pub fn sigma(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::Mechanical { sigma, .. } => sigma.value(x),
            ModelKind::ShiftedQuadratic { .. } | ModelKind::ArctanDiscount => 1.0,
            ModelKind::Custom(h) => h.sigma(x),
        }
    }

    pub fn potential_at(&self, x: &[f64], lambda: f64) -> f64 {
        self.potential.value(x, lambda)
    }

    pub fn potential0(&self, x: &[f64]) -> f64 {
        self.potential.value(x, 0.0)
    }

    /// inf over u of H(x, p, u), using analytic limits where available.
    pub fn inf_h_over_u(&self, x: &[f64], p: &[f64]) -> f64 {
        match &self.kind {
            ModelKind::Mechanical { .. } | ModelKind::ShiftedQuadratic { .. } => f64::NEG_INFINITY,
            ModelKind::ArctanDiscount => -FRAC_PI_2 + norm2(p),
            ModelKind::Custom(h) => (0..=12)
                .map(|k| -(10f64.powi(k)))
                .chain(std::iter::once(0.0))
                .map(|u| h.hamiltonian(x, p, u))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Samples the structural assumptions on grid nodes and velocities:
    /// σ > 0, ∂L/∂u(·,·,0) < 0, L strictly decreasing in u, and for custom
    /// models an interior Fenchel argmax.
    pub fn check_invariants(&self, grid: &PeriodicGrid, vset: &VelocitySet) -> Result<()> {
        let us = [-2.0, -0.5, 0.0, 0.5, 2.0];
        for x in grid.nodes() {
            let xc = x.coords();
            if self.sigma(xc) <= 0.0 {
                return Err(Error::Model(format!("sigma not positive at {xc:?}")));
            }
            for v in vset.iter() {
                let d = self.dl_du0(xc, v);
                if d >= 0.0 || !d.is_finite() {
                    return Err(Error::Model(format!("dL/du(x,v,0) = {d} is not negative at x = {xc:?}, v = {v:?}")));
                }
                if let ModelKind::Custom(_) = self.kind {
                    for &u in &us {
                        fenchel_lagrangian(self, &x, v, u, self.fenchel_samples)?;
                    }
                }
                let ls: Vec<f64> = us.iter().map(|&u| self.lagrangian(xc, v, u)).collect();
                if ls.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::Model(format!("L is not strictly decreasing in u at x = {xc:?}, v = {v:?}")));
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum()
}

fn fenchel_max(model: &ControlModel, x: &[f64], v: &[f64], u: f64, m: usize) -> (f64, bool) {
    let pb = model.p_box;
    let step = 2.0 * pb / (m - 1) as f64;
    let coord = |k: usize| -pb + k as f64 * step;
    let mut best = f64::NEG_INFINITY;
    let mut on_boundary = false;
    let mut consider = |p: &[f64], boundary: bool| {
        let val: f64 = p.iter().zip(v).map(|(p, v)| p * v).sum::<f64>() - model.hamiltonian(x, p, u);
        if val > best {
            best = val;
            on_boundary = boundary;
        }
    };
    match model.dim {
        1 => {
            for k in 0..m {
                consider(&[coord(k)], k == 0 || k == m - 1);
            }
        }
        _ => {
            for k0 in 0..m {
                for k1 in 0..m {
                    let b = k0 == 0 || k0 == m - 1 || k1 == 0 || k1 == m - 1;
                    consider(&[coord(k0), coord(k1)], b);
                }
            }
        }
    }
    (best, on_boundary)
}

/// max over the momentum lattice of ⟨p, v⟩ − H(x, p, u).
pub fn fenchel_lagrangian(model: &ControlModel, x: &TorusPoint, v: &[f64], u: f64, m: usize) -> Result<f64> {
    if m < 33 {
        return Err(Error::Config(format!("Fenchel transform needs at least 33 samples per axis, got {m}")));
    }
    if m % 2 == 0 {
        return Err(Error::Config(format!("Fenchel samples per axis must be odd, got {m}")));
    }
    if v.len() != model.dim || x.dim() != model.dim {
        return Err(Error::Domain("dimension mismatch in Fenchel transform".into()));
    }
    let (val, boundary) = fenchel_max(model, x.coords(), v, u, m);
    if boundary {
        return Err(Error::PBoxTooSmall { x: x.coords().to_vec(), v: v.to_vec(), p_box: model.p_box });
    }
    Ok(val)
}

/// Uniform symmetric velocity lattice, lexicographically ordered.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocitySet {
    dim: usize,
    vmax: f64,
    m: usize,
    velocities: Vec<[f64; MAX_DIM]>,
}

pub fn velocity_set(vmax: f64, m_per_axis: usize, dim: usize) -> Result<VelocitySet> {
    VelocitySet::new(vmax, m_per_axis, dim)
}

impl VelocitySet {
    pub fn new(vmax: f64, m: usize, dim: usize) -> Result<Self> {
        if !(vmax > 0.0 && vmax.is_finite()) {
            return Err(Error::Config(format!("vmax must be positive, got {vmax}")));
        }
        if m % 2 == 0 || m < 3 {
            return Err(Error::Config(format!("velocity samples per axis must be odd and at least 3, got {m}")));
        }
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::Config(format!("unsupported dimension {dim}")));
        }
        let half = (m - 1) / 2;
        let step = vmax / half as f64;
        let axis: Vec<f64> = (0..m).map(|k| (k as f64 - half as f64) * step).collect();
        let velocities = match dim {
            1 => axis.iter().map(|&a| [a, 0.0]).collect(),
            _ => axis.iter().flat_map(|&a| axis.iter().map(move |&b| [a, b])).collect(),
        };
        Ok(Self { dim, vmax, m, velocities })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vmax(&self) -> f64 {
        self.vmax
    }

    pub fn per_axis(&self) -> usize {
        self.m
    }

    pub fn step(&self) -> f64 {
        2.0 * self.vmax / (self.m - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn get(&self, j: usize) -> &[f64] {
        &self.velocities[j][..self.dim]
    }

    pub fn raw(&self) -> &[[f64; MAX_DIM]] {
        &self.velocities
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.velocities.iter().map(move |v| &v[..self.dim])
    }

    pub fn zero_index(&self) -> usize {
        self.velocities.len() / 2
    }

    pub fn axis_indices(&self, j: usize) -> [usize; MAX_DIM] {
        match self.dim {
            1 => [j, 0],
            _ => [j / self.m, j % self.m],
        }
    }

    /// Index of the lattice velocity nearest to `v`, clamped to the lattice.
    pub fn nearest_index(&self, v: &[f64]) -> usize {
        let half = ((self.m - 1) / 2) as f64;
        let step = self.step();
        let k = |c: f64| ((c / step).round() + half).clamp(0.0, (self.m - 1) as f64) as usize;
        match self.dim {
            1 => k(v[0]),
            _ => k(v[0]) * self.m + k(v[1]),
        }
    }

    /// True if some component of velocity `j` sits at ±vmax.
    pub fn on_boundary(&self, j: usize) -> bool {
        let a = self.axis_indices(j);
        a[..self.dim].iter().any(|&k| k == 0 || k == self.m - 1)
    }

    /// Index of −v_j.
    pub fn negation(&self, j: usize) -> usize {
        self.velocities.len() - 1 - j
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::wrap_point;

    struct HalfSquare;
    impl CustomHamiltonian for HalfSquare {
        fn dim(&self) -> usize {
            1
        }
        fn hamiltonian(&self, _x: &[f64], p: &[f64], u: f64) -> f64 {
            u + 0.5 * p[0] * p[0]
        }
        fn dl_du0(&self, _x: &[f64], _v: &[f64]) -> f64 {
            -1.0
        }
        fn dh_du0(&self, _x: &[f64], _p: &[f64]) -> f64 {
            1.0
        }
    }

    fn half_square_model() -> ControlModel {
        ControlModel::custom(Arc::new(HalfSquare), Potential::zero()).unwrap()
    }

    #[test]
    fn fenchel_of_half_square() {
        let m = half_square_model().with_fenchel_box(4.0, 129);
        let x = wrap_point(&[0.3]).unwrap();
        assert_eq!(fenchel_lagrangian(&m, &x, &[0.0], 0.0, 129).unwrap(), 0.0);
        assert!((fenchel_lagrangian(&m, &x, &[1.0], 0.0, 129).unwrap() - 0.5).abs() < 1e-3);
        assert!(matches!(
            fenchel_lagrangian(&m, &x, &[5.0], 0.0, 129),
            Err(Error::PBoxTooSmall { .. })
        ));
        assert!(matches!(fenchel_lagrangian(&m, &x, &[0.0], 0.0, 17), Err(Error::Config(_))));
    }

    #[test]
    fn fenchel_matches_shifted_quadratic() {
        let params = ModelParams { alpha: Some(vec![0.6]), ..Default::default() };
        let m = builtin_model("shifted_quadratic", &params).unwrap();
        let x = wrap_point(&[0.1]).unwrap();
        let numeric = fenchel_lagrangian(&m, &x, &[1.0], 0.0, 129).unwrap();
        assert!((numeric - (-0.1)).abs() < 1e-3);
        assert!((m.lagrangian(&[0.1], &[1.0], 0.0) - (-0.1)).abs() < 1e-15);
    }

    #[test]
    fn builtin_examples() {
        let sq = builtin_model("shifted_quadratic", &ModelParams::default()).unwrap();
        assert!((sq.critical_value() - 0.5 * golden_alpha().powi(2)).abs() < 1e-15);
        let mech = builtin_model(
            "mechanical",
            &ModelParams { potential_u: Some("cos(1)".parse().unwrap()), ..Default::default() },
        )
        .unwrap();
        for x in [0.0, 0.37, 0.9] {
            assert_eq!(mech.dl_du0(&[x], &[0.7]), -1.0);
        }
        assert_eq!(mech.critical_value(), 1.0);
        let at = builtin_model("arctan_discount", &ModelParams::default()).unwrap();
        for u in [-1e12, -3.0, 0.0, 5.0, 1e12] {
            let h = at.hamiltonian(&[0.2], &[0.0], u);
            assert!(h > -FRAC_PI_2 && h < FRAC_PI_2);
        }
        assert!((at.potential_at(&[0.4], 0.3) - FRAC_PI_2).abs() < 1e-15);
        assert!(matches!(builtin_model("pendulum", &ModelParams::default()), Err(Error::Config(_))));
    }

    #[test]
    fn sigma_discounted_potential() {
        let params = ModelParams {
            sigma: Some("1.5 + 0.5*cos(1)".parse().unwrap()),
            phi: Some("sin(1)".parse().unwrap()),
            ..Default::default()
        };
        let m = builtin_model("sigma_discounted", &params).unwrap();
        let x = [0.25];
        assert!((m.potential0(&x) - (-(1.5 + 0.5 * (0.5 * std::f64::consts::PI).cos()) * 1.0)).abs() < 1e-12);
        assert!((m.dl_du0(&x, &[0.0]) + m.sigma(&x)).abs() < 1e-15);
        let bad = ModelParams { sigma: Some("cos(1)".parse().unwrap()), ..Default::default() };
        assert!(matches!(builtin_model("sigma_discounted", &bad), Err(Error::Model(_))));
    }

    #[test]
    fn velocity_lattices() {
        let v = velocity_set(2.0, 5, 1).unwrap();
        assert_eq!(v.iter().map(|v| v[0]).collect::<Vec<_>>(), vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        let v3 = velocity_set(1.0, 3, 1).unwrap();
        assert_eq!(v3.iter().map(|v| v[0]).collect::<Vec<_>>(), vec![-1.0, 0.0, 1.0]);
        assert!(matches!(velocity_set(1.0, 4, 1), Err(Error::Config(_))));
        let v2 = velocity_set(1.0, 3, 2).unwrap();
        assert_eq!(v2.len(), 9);
        assert_eq!(v2.get(v2.zero_index()), &[0.0, 0.0]);
        for j in 0..v2.len() {
            let n = v2.get(v2.negation(j));
            assert_eq!([-n[0], -n[1]], [v2.get(j)[0], v2.get(j)[1]]);
            assert_eq!(v2.nearest_index(v2.get(j)), j);
        }
    }

    #[test]
    fn custom_model_invariants() {
        let grid = PeriodicGrid::new(1, 8).unwrap();
        let vs = velocity_set(2.0, 5, 1).unwrap();
        half_square_model().check_invariants(&grid, &vs).unwrap();
        let tight = half_square_model().with_fenchel_box(1.5, 65);
        assert!(matches!(tight.check_invariants(&grid, &vs), Err(Error::PBoxTooSmall { .. })));
    }
}
