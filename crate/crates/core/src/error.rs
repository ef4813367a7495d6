use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("p_box too small: Fenchel argmax on the momentum box boundary (x = {x:?}, v = {v:?}, p_box = {p_box})")]
    PBoxTooSmall { x: Vec<f64>, v: Vec<f64>, p_box: f64 },

    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    #[error("linear program failed: {0}")]
    Lp(String),

    #[error("node {node}: {source}")]
    AtNode {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("curve error: {0}")]
    Curve(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn at_node(node: usize, source: Error) -> Self {
        Error::AtNode { node, source: Box::new(source) }
    }
}
