use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hj::SweepEntry;
use crate::torus::{fmt17, GridField};

/// Where the reference field came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Formula,
    Extrapolation,
    Analytic,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Formula => "formula",
            Self::Extrapolation => "extrapolation",
            Self::Analytic => "analytic",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub lambda: f64,
    /// sup |u_λ − reference|; absent when the solve failed.
    pub error: Option<f64>,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    pub provenance: Provenance,
    /// Every error is at most twice its predecessor.
    pub monotone: bool,
}

impl ConvergenceReport {
    pub fn final_error(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.error)
    }

    /// Rows `lambda,error,iterations,residual,converged`; missing values are empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# reference={}", self.provenance.as_str())?;
        writeln!(w, "lambda,error,iterations,residual,converged")?;
        let opt = |x: Option<f64>| x.map(fmt17).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt17(r.lambda),
                opt(r.error),
                r.iterations.map(|i| i.to_string()).unwrap_or_default(),
                opt(r.residual),
                u8::from(r.converged)
            )?;
        }
        Ok(())
    }
}

/// e_{k+1} ≤ 2 e_k along the defined errors.
pub fn factor_two_monotone(errors: &[f64]) -> bool {
    errors.windows(2).all(|w| w[1] <= 2.0 * w[0] + 1e-15)
}

pub fn convergence_report(sweep: &[SweepEntry], reference: &GridField, provenance: Provenance) -> Result<ConvergenceReport> {
    if sweep.is_empty() {
        return Err(Error::Config("convergence report needs a nonempty sweep".into()));
    }
    let mut rows = Vec::with_capacity(sweep.len());
    for e in sweep {
        rows.push(match &e.result {
            Ok((u, rep)) => {
                if u.grid() != reference.grid() {
                    return Err(Error::Domain("reference and sweep live on different grids".into()));
                }
                ConvergenceRow {
                    lambda: e.lambda,
                    error: Some(u.sup_distance(reference)),
                    iterations: Some(rep.iterations),
                    residual: Some(rep.final_residual),
                    converged: rep.converged,
                }
            }
            Err(_) => ConvergenceRow { lambda: e.lambda, error: None, iterations: None, residual: None, converged: false },
        });
    }
    let errors: Vec<f64> = rows.iter().filter_map(|r| r.error).collect();
    let monotone = errors.len() == rows.len() && factor_two_monotone(&errors);
    Ok(ConvergenceReport { rows, provenance, monotone })
}
