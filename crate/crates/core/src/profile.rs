//! Scalar functions on the torus used as potentials, weights and test data.
//!
//! Profiles are written as sums of terms, for example
//! `0.3 + sin(1)`, `cos(1,0) - 0.5*cos(0,2)` or `-0.1*bump(0.5,0.1)`.
//! `cos(k)` is `cos(2*pi*k*x)`; on T^2 the frequency is a pair `cos(k0,k1)`.
//! `bump(c, r)` is the unit tent of radius `r` centred at `c` (on T^2:
//! `bump(c0, c1, r)`), measured in torus distance.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::torus::{wrap_point, GridField, PeriodicGrid, TorusPoint};

#[derive(Clone, Debug, PartialEq)]
enum Atom {
    One,
    Cos([i32; 2]),
    Sin([i32; 2]),
    Bump { center: [f64; 2], radius: f64 },
}

#[derive(Clone, Debug, PartialEq)]
struct Term {
    coef: f64,
    atom: Atom,
}

type ProfileFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Series(Vec<Term>),
    Sampled(GridField),
    Product(Box<Profile>, Box<Profile>),
    Func(ProfileFn, String),
}

/// A real function on T^d.
#[derive(Clone)]
pub struct Profile {
    repr: Repr,
}

impl Profile {
    pub fn constant(c: f64) -> Self {
        Self { repr: Repr::Series(vec![Term { coef: c, atom: Atom::One }]) }
    }

    pub fn zero() -> Self {
        Self { repr: Repr::Series(Vec::new()) }
    }

    /// `amplitude * cos(2 pi k . x)`.
    pub fn cos(amplitude: f64, k: [i32; 2]) -> Self {
        Self { repr: Repr::Series(vec![Term { coef: amplitude, atom: Atom::Cos(k) }]) }
    }

    /// `amplitude * sin(2 pi k . x)`.
    pub fn sin(amplitude: f64, k: [i32; 2]) -> Self {
        Self { repr: Repr::Series(vec![Term { coef: amplitude, atom: Atom::Sin(k) }]) }
    }

    /// Interpolated grid samples.
    pub fn sampled(field: GridField) -> Self {
        Self { repr: Repr::Sampled(field) }
    }

    pub fn from_fn(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { repr: Repr::Func(Arc::new(f), name.into()) }
    }

    pub fn product(a: Profile, b: Profile) -> Self {
        Self { repr: Repr::Product(Box::new(a), Box::new(b)) }
    }

    /// Sum of two profiles; series are merged, anything else falls back to a closure.
    pub fn plus(self, other: Profile) -> Self {
        match (self.repr, other.repr) {
            (Repr::Series(mut a), Repr::Series(b)) => {
                a.extend(b);
                Self { repr: Repr::Series(a) }
            }
            (a, b) => {
                let (pa, pb) = (Profile { repr: a }, Profile { repr: b });
                let name = format!("({pa}) + ({pb})");
                Self::from_fn(name, move |x| pa.value(x) + pb.value(x))
            }
        }
    }

    pub fn scaled(self, k: f64) -> Self {
        match self.repr {
            Repr::Series(terms) => Self {
                repr: Repr::Series(terms.into_iter().map(|t| Term { coef: k * t.coef, ..t }).collect()),
            },
            other => Self::product(Profile::constant(k), Profile { repr: other }),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.repr, Repr::Series(t) if t.iter().all(|t| t.coef == 0.0))
    }

    /// Value at a point given by its coordinates.
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.repr {
            Repr::Series(terms) => terms.iter().map(|t| t.coef * atom_value(&t.atom, x)).sum(),
            Repr::Sampled(f) => match wrap_point(x) {
                Ok(p) => f.interpolate(&p),
                Err(_) => f64::NAN,
            },
            Repr::Product(a, b) => a.value(x) * b.value(x),
            Repr::Func(f, _) => f(x),
        }
    }

    pub fn at(&self, x: &TorusPoint) -> f64 {
        self.value(x.coords())
    }

    pub fn sample(&self, grid: &PeriodicGrid) -> Result<GridField> {
        GridField::from_fn(*grid, |x| self.at(x))
    }

    /// Maximum over a fine uniform sampling (4096 points on T^1, 256^2 on T^2).
    pub fn fine_max(&self, dim: usize) -> f64 {
        let n = if dim == 1 { 4096 } else { 256 };
        let grid = PeriodicGrid::new(dim, n).expect("valid fine grid");
        grid.nodes().map(|x| self.at(&x)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn fine_min(&self, dim: usize) -> f64 {
        -self.clone().scaled(-1.0).fine_max(dim)
    }
}

fn atom_value(atom: &Atom, x: &[f64]) -> f64 {
    let dot = |k: &[i32; 2]| -> f64 { x.iter().zip(k).map(|(c, &k)| c * k as f64).sum() };
    match atom {
        Atom::One => 1.0,
        Atom::Cos(k) => (2.0 * PI * dot(k)).cos(),
        Atom::Sin(k) => (2.0 * PI * dot(k)).sin(),
        Atom::Bump { center, radius } => {
            let d2: f64 = x
                .iter()
                .zip(center)
                .map(|(a, b)| {
                    let d = (a - b).rem_euclid(1.0);
                    let d = d.min(1.0 - d);
                    d * d
                })
                .sum();
            (1.0 - d2.sqrt() / radius).max(0.0)
        }
    }
}

impl fmt::Debug for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Profile({self})")
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.repr {
            Repr::Series(terms) => {
                if terms.is_empty() {
                    return write!(f, "0");
                }
                for (i, t) in terms.iter().enumerate() {
                    let (sign, mag) = if t.coef < 0.0 { ("-", -t.coef) } else { ("+", t.coef) };
                    if i == 0 {
                        if sign == "-" {
                            write!(f, "-")?;
                        }
                    } else {
                        write!(f, " {sign} ")?;
                    }
                    match &t.atom {
                        Atom::One => write!(f, "{mag}")?,
                        atom => {
                            if mag != 1.0 {
                                write!(f, "{mag}*")?;
                            }
                            match atom {
                                Atom::Cos(k) => write!(f, "cos({})", freq(k))?,
                                Atom::Sin(k) => write!(f, "sin({})", freq(k))?,
                                Atom::Bump { center, radius } if center[1] == 0.0 => {
                                    write!(f, "bump({},{})", center[0], radius)?
                                }
                                Atom::Bump { center, radius } => {
                                    write!(f, "bump({},{},{})", center[0], center[1], radius)?
                                }
                                Atom::One => unreachable!(),
                            }
                        }
                    }
                }
                Ok(())
            }
            Repr::Sampled(g) => write!(f, "sampled[{}^{}]", g.grid().n(), g.grid().dim()),
            Repr::Product(a, b) => write!(f, "({a})*({b})"),
            Repr::Func(_, name) => write!(f, "{name}"),
        }
    }
}

fn freq(k: &[i32; 2]) -> String {
    if k[1] == 0 {
        format!("{}", k[0])
    } else {
        format!("{},{}", k[0], k[1])
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Parser { src: s, pos: 0 }.series().map(|terms| Profile { repr: Repr::Series(terms) })
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Parse(format!("profile `{}` at column {}: {msg}", self.src, self.pos + 1))
    }

    fn skip_ws(&mut self) {
        while self.rest().starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn series(&mut self) -> Result<Vec<Term>> {
        let mut terms = Vec::new();
        let mut sign = if self.eat('-') {
            -1.0
        } else {
            self.eat('+');
            1.0
        };
        loop {
            let mut t = self.term()?;
            t.coef *= sign;
            terms.push(t);
            self.skip_ws();
            if self.rest().is_empty() {
                return Ok(terms);
            }
            sign = if self.eat('+') {
                1.0
            } else if self.eat('-') {
                -1.0
            } else {
                return Err(self.err("expected `+` or `-`"));
            };
        }
    }

    fn term(&mut self) -> Result<Term> {
        self.skip_ws();
        if self.rest().starts_with(|c: char| c.is_ascii_digit() || c == '.') {
            let coef = self.number()?;
            if self.eat('*') {
                let atom = self.atom()?;
                return Ok(Term { coef, atom });
            }
            return Ok(Term { coef, atom: Atom::One });
        }
        let atom = self.atom()?;
        Ok(Term { coef: 1.0, atom })
    }

    fn number(&mut self) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() {
            let c = bytes[self.pos] as char;
            let exp_sign = (c == '-' || c == '+')
                && self.pos > start
                && matches!(bytes[self.pos - 1] as char, 'e' | 'E');
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map_err(|_| self.err("malformed number"))
            .and_then(|v| if v.is_finite() { Ok(v) } else { Err(self.err("non-finite number")) })
    }

    fn args(&mut self) -> Result<Vec<f64>> {
        if !self.eat('(') {
            return Err(self.err("expected `(`"));
        }
        let mut out = vec![self.signed_number()?];
        while self.eat(',') {
            out.push(self.signed_number()?);
        }
        if !self.eat(')') {
            return Err(self.err("expected `)`"));
        }
        Ok(out)
    }

    fn signed_number(&mut self) -> Result<f64> {
        if self.eat('-') {
            Ok(-self.number()?)
        } else {
            self.number()
        }
    }

    fn atom(&mut self) -> Result<Atom> {
        self.skip_ws();
        let name: String = self.rest().chars().take_while(|c| c.is_ascii_alphabetic()).collect();
        self.pos += name.len();
        let args = self.args()?;
        let int_freq = |p: &Self| -> Result<[i32; 2]> {
            if args.len() > 2 || args.iter().any(|a| a.fract() != 0.0) {
                return Err(p.err("frequencies are one or two integers"));
            }
            Ok([args[0] as i32, args.get(1).copied().unwrap_or(0.0) as i32])
        };
        match name.as_str() {
            "cos" => Ok(Atom::Cos(int_freq(self)?)),
            "sin" => Ok(Atom::Sin(int_freq(self)?)),
            "bump" => {
                let (center, radius) = match args.as_slice() {
                    [c, r] => ([*c, 0.0], *r),
                    [c0, c1, r] => ([*c0, *c1], *r),
                    _ => return Err(self.err("bump takes (center, radius) or (c0, c1, radius)")),
                };
                if radius <= 0.0 {
                    return Err(self.err("bump radius must be positive"));
                }
                Ok(Atom::Bump { center, radius })
            }
            "" => Err(self.err("expected a number or a function")),
            other => Err(self.err(&format!("unknown function `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_evaluate() {
        let p: Profile = "sin(1) + 0.3".parse().unwrap();
        assert!((p.value(&[0.25]) - 1.3).abs() < 1e-15);
        let q: Profile = "-0.5*cos(1,0) - 2e-1*sin(0,2)".parse().unwrap();
        assert!((q.value(&[0.0, 0.125]) - (-0.5 - 0.2)).abs() < 1e-15);
        let b: Profile = "-0.1*bump(0.5,0.1)".parse().unwrap();
        assert!((b.value(&[0.5]) + 0.1).abs() < 1e-15);
        assert!((b.value(&[0.45]) + 0.05).abs() < 1e-15);
        assert_eq!(b.value(&[0.2]), 0.0);
        assert!((b.value(&[0.55]) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn display_round_trips() {
        for s in ["sin(1) + 0.3", "-0.5*cos(1,0) - 0.2*sin(0,2)", "cos(2)", "-0.1*bump(0.5,0.1)"] {
            let p: Profile = s.parse().unwrap();
            let again: Profile = p.to_string().parse().unwrap();
            for x in [0.0, 0.13, 0.7] {
                assert_eq!(p.value(&[x, 0.3]), again.value(&[x, 0.3]));
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!("cos(1.5)".parse::<Profile>().is_err());
        assert!("tan(1)".parse::<Profile>().is_err());
        assert!("1 +".parse::<Profile>().is_err());
        assert!("bump(0.5,0)".parse::<Profile>().is_err());
    }

    #[test]
    fn fine_extrema() {
        let p: Profile = "cos(1)".parse().unwrap();
        assert_eq!(p.fine_max(1), 1.0);
        assert!((p.fine_min(1) + 1.0).abs() < 1e-12);
    }
}
