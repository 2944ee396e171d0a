//! Sparse DAG structure learning for linear structural equation models.
//!
//! Given an n-by-m sample matrix whose columns follow a linear SEM, the crate
//! searches for the directed acyclic graph minimizing squared reconstruction
//! error plus an l0 arc penalty (and optional Tikhonov term). The search is
//! an exact branch-and-bound over binary arc indicators, with continuous node
//! relaxations solved to certified lower bounds. Two relaxation families are
//! available: big-M interval relaxation and a perspective-strengthened
//! relaxation (solved directly or via outer-approximation cuts). A dynamic
//! programming oracle, a synthetic instance generator, and a benchmark
//! harness round out the toolkit; the `bnsl` binary exposes everything on the
//! command line.

pub mod bnb;
pub mod datagen;
pub mod evalbench;
pub mod formulation;
pub mod graphs;
mod linalg;
pub mod oracle;
pub mod relax;
pub mod score;

/// Crate-wide error type; the CLI maps variants onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("input graph is cyclic")]
    CyclicInput,
    #[error("node count mismatch: {left} vs {right}")]
    NodeCountMismatch { left: usize, right: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("matrix is not positive semidefinite: pivot {pivot:.6e} at index {index}")]
    NotPsd { index: usize, pivot: f64 },
    #[error("relaxation failed to converge; best certified bound {best_lb}")]
    RelaxStalled { best_lb: f64 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("csv: {other:?}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
