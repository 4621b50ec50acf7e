//! The Stiefel manifold `St(n,p) = { X ∈ ℝ^{n×p} : XᵀX = I }`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};
use crate::flops::FlopCounter;
use crate::matrix::{self, DenseMatrix};

/// Feasibility tolerance on `‖XᵀX − I‖_F` for checked construction.
pub const FEASIBILITY_TOL: f64 = 1e-10;

/// An `n×p` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint(DenseMatrix);

impl StiefelPoint {
    /// Checked constructor; fails when `‖XᵀX − I‖_F > 1e-10`.
    pub fn new(m: DenseMatrix) -> Result<Self> {
        if m.nrows() < m.ncols() || m.ncols() == 0 {
            return dim_err("StiefelPoint::new", format!("need n ≥ p ≥ 1, got {:?}", m.shape()));
        }
        let point = StiefelPoint(m);
        let violation = point.feasibility_violation();
        if !(violation <= FEASIBILITY_TOL) {
            return Err(Error::Infeasible { violation });
        }
        Ok(point)
    }

    pub(crate) fn from_matrix_unchecked(m: DenseMatrix) -> Self {
        StiefelPoint(m)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut DenseMatrix {
        &mut self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn p(&self) -> usize {
        self.0.ncols()
    }

    /// `‖XᵀX − I‖_F`.
    pub fn feasibility_violation(&self) -> f64 {
        let p = self.p();
        let gram = matrix::mul_tn(&self.0, &self.0).expect("self product");
        (gram - DenseMatrix::identity(p, p)).norm()
    }
}

/// A matrix in `T_X St(n,p)`, i.e. with `sym(Xᵀξ) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(DenseMatrix);

impl TangentVector {
    /// Wraps `ξ` after checking `‖sym(Xᵀξ)‖_F ≤ 1e-10` at `base`.
    pub fn new(base: &StiefelPoint, m: DenseMatrix) -> Result<Self> {
        matrix::check_same_shape("TangentVector::new", base.matrix(), &m)?;
        let v = TangentVector(m);
        let violation = v.tangency_violation(base);
        if !(violation <= FEASIBILITY_TOL) {
            return Err(Error::Config(format!(
                "matrix is not tangent at the base point: ‖sym(Xᵀξ)‖ = {violation:e}"
            )));
        }
        Ok(v)
    }

    pub fn zero(n: usize, p: usize) -> Self {
        TangentVector(DenseMatrix::zeros(n, p))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector(&self.0 * s)
    }

    /// `‖sym(Xᵀξ)‖_F`.
    pub fn tangency_violation(&self, base: &StiefelPoint) -> f64 {
        let xt = matrix::mul_tn(base.matrix(), &self.0).expect("shapes checked");
        matrix::sym(&xt).expect("square").norm()
    }
}

/// Uniformly distributed point on `St(n,p)`: the polar factor of a Gaussian matrix.
pub fn random_stiefel<R: Rng + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<StiefelPoint> {
    if n < p || p == 0 {
        return dim_err("random_stiefel", format!("need n ≥ p ≥ 1, got n={n}, p={p}"));
    }
    loop {
        let g = DenseMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal));
        match matrix::polar_project(&g) {
            Ok(x) => return Ok(x),
            // rank deficiency has probability zero; redraw
            Err(Error::Singular { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// `ξ − X·sym(Xᵀξ)`.
pub fn tangent_project(x: &StiefelPoint, xi: &DenseMatrix) -> Result<TangentVector> {
    tangent_project_counted(x, xi, &mut FlopCounter::new())
}

pub fn tangent_project_counted(
    x: &StiefelPoint,
    xi: &DenseMatrix,
    flops: &mut FlopCounter,
) -> Result<TangentVector> {
    matrix::check_same_shape("tangent_project", x.matrix(), xi)?;
    let (n, p) = xi.shape();
    let s = matrix::sym(&matrix::mul_tn(x.matrix(), xi)?)?;
    flops.gemm(p, n, p);
    let correction = matrix::mul(x.matrix(), &s)?;
    flops.gemm(n, p, p);
    flops.elementwise(n * p);
    Ok(TangentVector(xi - correction))
}

/// Polar retraction `(X + ξ)(I + ξᵀξ)^{-1/2}`.
pub fn retract(x: &StiefelPoint, xi: &TangentVector) -> Result<StiefelPoint> {
    retract_counted(x, xi, &mut FlopCounter::new())
}

pub fn retract_counted(x: &StiefelPoint, xi: &TangentVector, flops: &mut FlopCounter) -> Result<StiefelPoint> {
    matrix::check_same_shape("retract", x.matrix(), xi.matrix())?;
    let (n, p) = x.matrix().shape();
    let moved = x.matrix() + xi.matrix();
    flops.elementwise(n * p);
    // the polar factor of X + ξ; its Gram equals I + ξᵀξ for exact inputs
    matrix::polar_project_counted(&moved, flops)
}

/// Riemannian subgradient `P_{T_X St}(g)` from a Euclidean subgradient `g`.
pub fn riemannian_subgradient(x: &StiefelPoint, g: &DenseMatrix) -> Result<TangentVector> {
    tangent_project(x, g)
}

/// `‖P_{T_X St}(g)‖_F` for the oracle's selected subgradient `g`.
///
/// Upper bounds `dist(0, ∂_St f(X))`; equals it wherever `f` is differentiable.
pub fn stationarity_proxy(x: &StiefelPoint, g: &DenseMatrix) -> Result<f64> {
    Ok(tangent_project(x, g)?.norm())
}
