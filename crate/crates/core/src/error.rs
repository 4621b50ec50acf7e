use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the kernels, solvers and oracles of this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("{op}: matrix is numerically singular (eigenvalue {eigenvalue:e} below floor {floor:e})")]
    Singular {
        op: &'static str,
        eigenvalue: f64,
        floor: f64,
    },

    #[error("{op}: input is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { op: &'static str, asymmetry: f64 },

    #[error("point is not on the Stiefel manifold: ‖XᵀX − I‖_F = {violation:e}")]
    Infeasible { violation: f64 },

    #[error("feasibility drift at iteration {iter}: ‖XᵀX − I‖_F = {violation:e}")]
    FeasibilityDrift { iter: usize, violation: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what}: size guard exceeded ({got} > {limit})")]
    SizeGuard {
        what: &'static str,
        limit: usize,
        got: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("malformed instance file: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Dimension {
        op,
        detail: detail.into(),
    })
}
