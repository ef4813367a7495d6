//! Numerical laboratory for the vanishing-discount selection principle of
//! perturbed Hamilton–Jacobi equations on flat tori.

pub mod barrier;
pub mod curves;
pub mod error;
pub mod experiment;
pub mod hj;
pub mod models;
pub mod mather;
pub mod profile;
pub mod selection;
pub mod simplex;
pub mod torus;

pub use error::{Error, Result};
