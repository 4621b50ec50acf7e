//! Objective oracles: the two benchmark problems and a few smooth toys.

use crate::error::{dim_err, Result};
use crate::flops::FlopCounter;
use crate::matrix::{self, DenseMatrix};
use crate::stiefel::StiefelPoint;

pub mod io;
pub mod odl;
pub mod rsr;

pub use odl::OdlInstance;
pub use rsr::RsrInstance;

/// An objective `f` over `St(n,p)` with a Euclidean subgradient selection.
///
/// The partial subgradient for a column set `C` must equal the columns `C`
/// of the full subgradient bit for bit. Solvers rely on the cache hooks to
/// avoid recomputing shared products: [`init_cache`](Self::init_cache) builds
/// state for a point and [`update_cache`](Self::update_cache) refreshes it
/// after the listed columns change.
pub trait ProblemOracle: Sync {
    type Cache: Clone + Send;

    /// `(n, p)`.
    fn shape(&self) -> (usize, usize);

    /// Certified bound on the subgradient norm over the manifold.
    fn lipschitz(&self) -> f64;

    /// Weak-convexity modulus `τ`.
    fn weak_convexity(&self) -> f64 {
        0.0
    }

    fn value(&self, x: &StiefelPoint) -> Result<f64>;

    fn subgradient(&self, x: &StiefelPoint, flops: &mut FlopCounter) -> Result<DenseMatrix>;

    fn partial_subgradient(&self, x: &StiefelPoint, cols: &[usize], flops: &mut FlopCounter) -> Result<DenseMatrix>;

    /// Distance to the planted solution, when there is one.
    fn error(&self, _x: &StiefelPoint) -> Option<f64> {
        None
    }

    fn init_cache(&self, x: &StiefelPoint, flops: &mut FlopCounter) -> Result<Self::Cache>;

    fn cached_partial_subgradient(
        &self,
        cache: &Self::Cache,
        x: &StiefelPoint,
        cols: &[usize],
        flops: &mut FlopCounter,
    ) -> Result<DenseMatrix>;

    fn update_cache(&self, cache: &mut Self::Cache, x: &StiefelPoint, cols: &[usize], flops: &mut FlopCounter) -> Result<()>;

    /// `f` at the point the cache was last synchronized with.
    fn cached_value(&self, cache: &Self::Cache, x: &StiefelPoint) -> Result<f64>;
}

pub(crate) fn check_point(op: &'static str, shape: (usize, usize), x: &StiefelPoint) -> Result<()> {
    if (x.n(), x.p()) != shape {
        return dim_err(op, format!("expected a {}×{} point, got {}×{}", shape.0, shape.1, x.n(), x.p()));
    }
    Ok(())
}

pub(crate) fn check_columns(op: &'static str, p: usize, cols: &[usize]) -> Result<()> {
    if let Some(&bad) = cols.iter().find(|&&c| c >= p) {
        return dim_err(op, format!("column {bad} out of range for p = {p}"));
    }
    Ok(())
}

/// Implements the cache hooks for oracles with no reusable state.
macro_rules! stateless_cache {
    () => {
        type Cache = ();

        fn init_cache(&self, _x: &StiefelPoint, _flops: &mut FlopCounter) -> Result<()> {
            Ok(())
        }

        fn cached_partial_subgradient(
            &self,
            _cache: &(),
            x: &StiefelPoint,
            cols: &[usize],
            flops: &mut FlopCounter,
        ) -> Result<DenseMatrix> {
            self.partial_subgradient(x, cols, flops)
        }

        fn update_cache(&self, _cache: &mut (), _x: &StiefelPoint, _cols: &[usize], _flops: &mut FlopCounter) -> Result<()> {
            Ok(())
        }

        fn cached_value(&self, _cache: &(), x: &StiefelPoint) -> Result<f64> {
            self.value(x)
        }
    };
}

/// `f ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroProblem {
    pub n: usize,
    pub p: usize,
}

impl ProblemOracle for ZeroProblem {
    stateless_cache!();

    fn shape(&self) -> (usize, usize) {
        (self.n, self.p)
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }

    fn value(&self, x: &StiefelPoint) -> Result<f64> {
        check_point("ZeroProblem::value", self.shape(), x)?;
        Ok(0.0)
    }

    fn subgradient(&self, x: &StiefelPoint, _flops: &mut FlopCounter) -> Result<DenseMatrix> {
        check_point("ZeroProblem::subgradient", self.shape(), x)?;
        Ok(DenseMatrix::zeros(self.n, self.p))
    }

    fn partial_subgradient(&self, x: &StiefelPoint, cols: &[usize], _flops: &mut FlopCounter) -> Result<DenseMatrix> {
        check_point("ZeroProblem::partial_subgradient", self.shape(), x)?;
        check_columns("ZeroProblem::partial_subgradient", self.p, cols)?;
        Ok(DenseMatrix::zeros(self.n, cols.len()))
    }
}

/// `f(X) = ⟨C, X⟩`.
#[derive(Debug, Clone)]
pub struct LinearProblem {
    pub c: DenseMatrix,
}

impl ProblemOracle for LinearProblem {
    stateless_cache!();

    fn shape(&self) -> (usize, usize) {
        self.c.shape()
    }

    fn lipschitz(&self) -> f64 {
        self.c.norm()
    }

    fn value(&self, x: &StiefelPoint) -> Result<f64> {
        check_point("LinearProblem::value", self.shape(), x)?;
        Ok(matrix::inner(&self.c, x.matrix()))
    }

    fn subgradient(&self, x: &StiefelPoint, _flops: &mut FlopCounter) -> Result<DenseMatrix> {
        check_point("LinearProblem::subgradient", self.shape(), x)?;
        Ok(self.c.clone())
    }

    fn partial_subgradient(&self, x: &StiefelPoint, cols: &[usize], _flops: &mut FlopCounter) -> Result<DenseMatrix> {
        check_point("LinearProblem::partial_subgradient", self.shape(), x)?;
        check_columns("LinearProblem::partial_subgradient", self.c.ncols(), cols)?;
        Ok(matrix::select_columns(&self.c, cols))
    }
}

/// `f(X) = ½‖X − A‖²_F`, smooth and convex with gradient `X − A`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub target: DenseMatrix,
}

impl ProblemOracle for QuadraticProblem {
    stateless_cache!();

    fn shape(&self) -> (usize, usize) {
        self.target.shape()
    }

    /// `‖X − A‖ ≤ √p + ‖A‖` on the manifold.
    fn lipschitz(&self) -> f64 {
        (self.target.ncols() as f64).sqrt() + self.target.norm()
    }

    fn value(&self, x: &StiefelPoint) -> Result<f64> {
        check_point("QuadraticProblem::value", self.shape(), x)?;
        Ok(0.5 * (x.matrix() - &self.target).norm_squared())
    }

    fn subgradient(&self, x: &StiefelPoint, flops: &mut FlopCounter) -> Result<DenseMatrix> {
        check_point("QuadraticProblem::subgradient", self.shape(), x)?;
        flops.elementwise(self.target.len());
        Ok(x.matrix() - &self.target)
    }

    fn partial_subgradient(&self, x: &StiefelPoint, cols: &[usize], flops: &mut FlopCounter) -> Result<DenseMatrix> {
        check_point("QuadraticProblem::partial_subgradient", self.shape(), x)?;
        check_columns("QuadraticProblem::partial_subgradient", self.target.ncols(), cols)?;
        flops.elementwise(self.target.nrows() * cols.len());
        Ok(matrix::select_columns(x.matrix(), cols) - matrix::select_columns(&self.target, cols))
    }
}
