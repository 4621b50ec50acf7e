//! Dense matrix kernels.
//!
//! Matrices are `nalgebra::DMatrix<f64>`, stored column-major, so the column
//! blocks `X_C` touched by every update are contiguous slices. Every kernel
//! that needs a factorization goes through one symmetric eigendecomposition.
//!
//! Products are routed through [`matrixmultiply::dgemm`] directly. For a
//! given output entry the accumulation order depends only on the inner
//! dimension, so computing a subset of columns gives bit-identical values to
//! computing all of them. The oracles rely on this.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{dim_err, Error, Result};
use crate::flops::FlopCounter;
use crate::stiefel::StiefelPoint;

pub type DenseMatrix = DMatrix<f64>;

/// Eigenvalues below `EIGEN_FLOOR × λ_max` make `inv_sqrt` fail.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Relative asymmetry tolerated by [`SpdMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Feasibility error above which a polar factor is recomputed once.
const REFINE_THRESHOLD: f64 = 1e-12;

#[derive(Clone, Copy)]
enum Op {
    N,
    T,
}

fn strides(m: &DenseMatrix, op: Op) -> (usize, usize, isize, isize) {
    let (r, c) = m.shape();
    match op {
        Op::N => (r, c, 1, r as isize),
        Op::T => (c, r, r as isize, 1),
    }
}

fn gemm(a: &DenseMatrix, opa: Op, b: &DenseMatrix, opb: Op, op: &'static str) -> Result<DenseMatrix> {
    let (m, k, rsa, csa) = strides(a, opa);
    let (k2, n, rsb, csb) = strides(b, opb);
    if k != k2 {
        return dim_err(op, format!("inner dimensions {k} and {k2} differ"));
    }
    let mut c = DenseMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return Ok(c);
    }
    // SAFETY: the pointers address `m×k`, `k×n` and `m×n` column-major buffers
    // owned by `a`, `b` and `c`, and the strides match their layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            1,
            m as isize,
        );
    }
    Ok(c)
}

/// `A·B`.
pub fn mul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    gemm(a, Op::N, b, Op::N, "mul")
}

/// `Aᵀ·B`.
pub fn mul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    gemm(a, Op::T, b, Op::N, "mul_tn")
}

/// `A·Bᵀ`.
pub fn mul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    gemm(a, Op::N, b, Op::T, "mul_nt")
}

/// Frobenius inner product `tr(AᵀB)`.
pub fn inner(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn check_same_shape(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(op, format!("shapes {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

/// Copies the listed columns into a new matrix.
pub fn select_columns(m: &DenseMatrix, cols: &[usize]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(m.nrows(), cols.len());
    for (dst, &src) in cols.iter().enumerate() {
        out.column_mut(dst).copy_from(&m.column(src));
    }
    out
}

/// Copies the listed rows into a new matrix.
pub fn select_rows(m: &DenseMatrix, rows: &[usize]) -> DenseMatrix {
    DenseMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Writes the columns of `src` into the listed columns of `dst`.
pub fn assign_columns(dst: &mut DenseMatrix, cols: &[usize], src: &DenseMatrix) {
    debug_assert_eq!(src.ncols(), cols.len());
    for (from, &to) in cols.iter().enumerate() {
        dst.column_mut(to).copy_from(&src.column(from));
    }
}

fn require_square(op: &'static str, m: &DenseMatrix) -> Result<()> {
    if !m.is_square() {
        return dim_err(op, format!("expected a square matrix, got {:?}", m.shape()));
    }
    Ok(())
}

/// Symmetric part `(M + Mᵀ)/2`.
pub fn sym(m: &DenseMatrix) -> Result<DenseMatrix> {
    require_square("sym", m)?;
    let n = m.nrows();
    Ok(DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            m[(i, i)]
        } else {
            0.5 * (m[(i, j)] + m[(j, i)])
        }
    }))
}

/// Skew-symmetric part `(M − Mᵀ)/2`.
pub fn skew(m: &DenseMatrix) -> Result<DenseMatrix> {
    require_square("skew", m)?;
    let n = m.nrows();
    Ok(DenseMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            0.5 * (m[(i, j)] - m[(j, i)])
        }
    }))
}

/// A symmetric matrix meant to be positive definite.
///
/// Construction symmetrizes the input after checking its asymmetry is within
/// [`SYMMETRY_TOL`]; positivity is checked by the consumers that factorize it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DenseMatrix);

impl SpdMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self> {
        require_square("SpdMatrix::new", &m)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SpdMatrix::new"));
        }
        let scale = m.norm().max(f64::MIN_POSITIVE);
        let asymmetry = (&m - m.transpose()).norm() / scale;
        if asymmetry > SYMMETRY_TOL {
            return Err(Error::NotSymmetric {
                op: "SpdMatrix::new",
                asymmetry,
            });
        }
        Ok(SpdMatrix(sym(&m)?))
    }

    pub fn identity(k: usize) -> Self {
        SpdMatrix(DenseMatrix::identity(k, k))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.0
    }
}

/// Eigenvalues and eigenvectors of a symmetric matrix (input is symmetrized).
pub fn symmetric_eigen(m: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    require_square("symmetric_eigen", m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("symmetric_eigen"));
    }
    let eig = SymmetricEigen::new(sym(m)?);
    Ok((eig.eigenvalues.iter().copied().collect(), eig.eigenvectors))
}

fn spectral_function(values: &[f64], vectors: &DenseMatrix, f: impl Fn(f64) -> f64) -> DenseMatrix {
    let mut scaled = vectors.clone();
    for (j, &v) in values.iter().enumerate() {
        let s = f(v);
        scaled.column_mut(j).scale_mut(s);
    }
    let out = mul_nt(&scaled, vectors).expect("eigenvector blocks are conformable");
    sym(&out).expect("square")
}

/// `S^{-1/2}` for symmetric positive definite `S`.
pub fn inv_sqrt(s: &SpdMatrix) -> Result<SpdMatrix> {
    let (values, vectors) = symmetric_eigen(s.as_matrix())?;
    let largest = values.iter().copied().fold(0.0f64, f64::max);
    let smallest = values.iter().copied().fold(f64::INFINITY, f64::min);
    let floor = EIGEN_FLOOR * largest;
    if values.is_empty() {
        return Ok(SpdMatrix(DenseMatrix::zeros(0, 0)));
    }
    if !(smallest > floor) {
        return Err(Error::Singular {
            op: "inv_sqrt",
            eigenvalue: smallest,
            floor,
        });
    }
    Ok(SpdMatrix(spectral_function(&values, &vectors, |v| 1.0 / v.sqrt())))
}

/// Nearest point on `St(n,k)` to `Ξ`, computed as `Ξ(ΞᵀΞ)^{-1/2}`.
pub fn polar_project(xi: &DenseMatrix) -> Result<StiefelPoint> {
    polar_project_counted(xi, &mut FlopCounter::new())
}

pub fn polar_project_counted(xi: &DenseMatrix, flops: &mut FlopCounter) -> Result<StiefelPoint> {
    let first = polar_once(xi, flops)?;
    // Forming the Gram squares the condition number; one more pass on the
    // nearly orthonormal result restores full accuracy.
    let (n, k) = xi.shape();
    flops.gemm(k, n, k);
    if first.feasibility_violation() > REFINE_THRESHOLD {
        return polar_once(first.matrix(), flops);
    }
    Ok(first)
}

fn polar_once(xi: &DenseMatrix, flops: &mut FlopCounter) -> Result<StiefelPoint> {
    let (n, k) = xi.shape();
    if n < k || k == 0 {
        return dim_err("polar_project", format!("need n ≥ k ≥ 1, got {n}×{k}"));
    }
    let gram = mul_tn(xi, xi)?;
    flops.gemm(k, n, k);
    let t = inv_sqrt(&SpdMatrix::new(gram)?).map_err(|e| match e {
        Error::Singular { eigenvalue, floor, .. } => Error::Singular {
            op: "polar_project",
            eigenvalue,
            floor,
        },
        other => other,
    })?;
    flops.eigh(k);
    flops.gemm(k, k, k);
    let out = mul(xi, t.as_matrix())?;
    flops.gemm(n, k, k);
    Ok(StiefelPoint::from_matrix_unchecked(out))
}

/// Sum of singular values, `tr((MᵀM)^{1/2})`.
pub fn nuclear_norm(m: &DenseMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.ncols() <= m.nrows() {
        mul_tn(m, m)
    } else {
        mul_nt(m, m)
    }
    .expect("gram of a matrix with itself");
    match symmetric_eigen(&gram) {
        Ok((values, _)) => values.iter().map(|v| v.max(0.0).sqrt()).sum(),
        Err(_) => f64::NAN,
    }
}

/// Largest singular value.
pub fn operator_norm(m: &DenseMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.ncols() <= m.nrows() {
        mul_tn(m, m)
    } else {
        mul_nt(m, m)
    }
    .expect("gram of a matrix with itself");
    match symmetric_eigen(&gram) {
        Ok((values, _)) => values.iter().copied().fold(0.0f64, f64::max).sqrt(),
        Err(_) => f64::NAN,
    }
}
