//! The averaging operator `A_X` attached to a partition, and its inverse.
//!
//! `A_X(ξ) = C(ℓ,2)^{-1} Σ_{i<j} (I − X_{−ij}X_{−ij}ᵀ) ξ_ij I_ijᵀ` is the
//! expected effect of one randomized pair update. It is self-adjoint with
//! eigenvalues `2/ℓ` and `C(ℓ,2)^{-1}`. The solvers never call anything here;
//! these routines back the diagnostics and tests.

use serde::Serialize;

use crate::blocks::{block_tangent_project, Partition};
use crate::error::{dim_err, Error, Result};
use crate::flops::FlopCounter;
use crate::matrix::{self, DenseMatrix};
use crate::stiefel::{tangent_project, StiefelPoint};

/// Largest `n·p` for which [`spectrum_check`] materializes the operator.
pub const SPECTRUM_SIZE_LIMIT: usize = 400;

/// `C(ℓ,2)` as a float.
pub fn pair_count(ell: usize) -> f64 {
    (ell * (ell - 1)) as f64 / 2.0
}

#[derive(Debug, Clone)]
pub struct AveragingContext {
    base: StiefelPoint,
    partition: Partition,
    q: DenseMatrix,
    q_prime: DenseMatrix,
}

impl AveragingContext {
    pub fn new(base: StiefelPoint, partition: Partition) -> Result<Self> {
        if base.p() != partition.p() {
            return dim_err("AveragingContext", format!("X has {} columns, partition covers {}", base.p(), partition.p()));
        }
        let l = partition.ell();
        let lf = l as f64;
        let q = DenseMatrix::from_fn(l, l, |r, c| if r == c { lf - 1.0 } else { 1.0 });
        let q_prime = DenseMatrix::from_fn(l, l, |r, c| if r == c { 1.0 / (lf - 1.0) } else { 1.0 });
        Ok(AveragingContext { base, partition, q, q_prime })
    }

    pub fn base(&self) -> &StiefelPoint {
        &self.base
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn ell(&self) -> usize {
        self.partition.ell()
    }

    /// `Q = J + (ℓ−2)I`.
    pub fn q_matrix(&self) -> &DenseMatrix {
        &self.q
    }

    /// `Q′ = J − ((ℓ−2)/(ℓ−1))I`, the entrywise reciprocal of `Q`.
    pub fn q_prime(&self) -> &DenseMatrix {
        &self.q_prime
    }

    /// The same partition at a different base point.
    pub fn rebased(&self, base: StiefelPoint) -> Result<Self> {
        Self::new(base, self.partition.clone())
    }

    fn check(&self, op: &'static str, xi: &DenseMatrix) -> Result<()> {
        if xi.shape() != self.base.matrix().shape() {
            return dim_err(op, format!("expected {:?}, got {:?}", self.base.matrix().shape(), xi.shape()));
        }
        Ok(())
    }
}

/// Scales block `(i,j)` of the `p×p` matrix `b` by `a[(i,j)]`.
pub fn block_hadamard(a: &DenseMatrix, b: &DenseMatrix, partition: &Partition) -> Result<DenseMatrix> {
    let (l, p) = (partition.ell(), partition.p());
    if a.shape() != (l, l) {
        return dim_err("block_hadamard", format!("scalar matrix must be {l}×{l}, got {:?}", a.shape()));
    }
    if b.shape() != (p, p) {
        return dim_err("block_hadamard", format!("operand must be {p}×{p}, got {:?}", b.shape()));
    }
    let owner: Vec<usize> = (0..p).map(|c| partition.block_of(c)).collect();
    Ok(DenseMatrix::from_fn(p, p, |r, c| a[(owner[r], owner[c])] * b[(r, c)]))
}

/// `X·(S ⊡ Xᵀξ) + t·(I − XXᵀ)ξ`.
fn coordinate_form(ctx: &AveragingContext, scalars: &DenseMatrix, normal_scale: f64, xi: &DenseMatrix) -> Result<DenseMatrix> {
    let x = ctx.base.matrix();
    let xtxi = matrix::mul_tn(x, xi)?;
    let tangential = matrix::mul(x, &block_hadamard(scalars, &xtxi, &ctx.partition)?)?;
    let normal = xi - matrix::mul(x, &xtxi)?;
    Ok(tangential + normal * normal_scale)
}

pub fn apply_averaging(ctx: &AveragingContext, xi: &DenseMatrix) -> Result<DenseMatrix> {
    ctx.check("apply_averaging", xi)?;
    let l = ctx.ell();
    coordinate_form(ctx, &(&ctx.q / pair_count(l)), 2.0 / l as f64, xi)
}

pub fn apply_averaging_inverse(ctx: &AveragingContext, xi: &DenseMatrix) -> Result<DenseMatrix> {
    ctx.check("apply_averaging_inverse", xi)?;
    let l = ctx.ell();
    coordinate_form(ctx, &(&ctx.q_prime * pair_count(l)), l as f64 / 2.0, xi)
}

/// The defining pair average, evaluated term by term.
pub fn averaging_by_definition(ctx: &AveragingContext, xi: &DenseMatrix) -> Result<DenseMatrix> {
    ctx.check("averaging_by_definition", xi)?;
    let x = ctx.base.matrix();
    let mut acc = DenseMatrix::zeros(xi.nrows(), xi.ncols());
    for pair in ctx.partition.all_pairs() {
        let outside = matrix::select_columns(x, pair.complement());
        let xi_ij = matrix::select_columns(xi, pair.columns());
        let term = &xi_ij - matrix::mul(&outside, &matrix::mul_tn(&outside, &xi_ij)?)?;
        let mut embedded = matrix::select_columns(&acc, pair.columns());
        embedded += term;
        matrix::assign_columns(&mut acc, pair.columns(), &embedded);
    }
    Ok(acc / pair_count(ctx.ell()))
}

/// `⟨ξ, η⟩_{A_X^{-1}} = ⟨A_X^{-1}(ξ), η⟩`.
pub fn mahalanobis_inner(ctx: &AveragingContext, xi: &DenseMatrix, eta: &DenseMatrix) -> Result<f64> {
    ctx.check("mahalanobis_inner", eta)?;
    Ok(matrix::inner(&apply_averaging_inverse(ctx, xi)?, eta))
}

pub fn mahalanobis_norm_sq(ctx: &AveragingContext, xi: &DenseMatrix) -> Result<f64> {
    Ok(mahalanobis_inner(ctx, xi, xi)?.max(0.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    /// Distinct eigenvalues (ascending) with multiplicities, as measured.
    pub measured: Vec<(f64, usize)>,
    /// The closed-form prediction.
    pub expected: Vec<(f64, usize)>,
    pub max_eigenvalue_error: f64,
    /// `max |M − Mᵀ|` of the materialized operator.
    pub asymmetry: f64,
    pub passed: bool,
}

/// Materializes `A_X` as an `np×np` matrix and compares its spectrum with the prediction.
pub fn spectrum_check(ctx: &AveragingContext) -> Result<SpectrumReport> {
    let (n, p) = (ctx.base.n(), ctx.base.p());
    let dim = n * p;
    if dim > SPECTRUM_SIZE_LIMIT {
        return Err(Error::SizeGuard { what: "n·p for spectrum_check", limit: SPECTRUM_SIZE_LIMIT, got: dim });
    }
    let mut dense = DenseMatrix::zeros(dim, dim);
    for k in 0..dim {
        let mut e = DenseMatrix::zeros(n, p);
        e[k] = 1.0;
        let image = apply_averaging(ctx, &e)?;
        dense.column_mut(k).copy_from_slice(image.as_slice());
    }
    let asymmetry = (&dense - dense.transpose()).amax();
    let (values, _) = matrix::symmetric_eigen(&matrix::sym(&dense)?)?;

    let l = ctx.ell();
    let sum_sq: usize = ctx.partition.sizes().iter().map(|s| s * s).sum();
    let mut expected = vec![(1.0 / pair_count(l), p * p - sum_sq), (2.0 / l as f64, (n - p) * p + sum_sq)];
    expected.sort_by(|a, b| a.0.total_cmp(&b.0));
    if (expected[0].0 - expected[1].0).abs() < 1e-12 {
        expected = vec![(expected[0].0, dim)];
    }
    expected.retain(|e| e.1 > 0);

    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let mut measured: Vec<(f64, usize)> = Vec::new();
    for v in sorted {
        match measured.last_mut() {
            Some((rep, count)) if (v - *rep).abs() < 1e-6 => *count += 1,
            _ => measured.push((v, 1)),
        }
    }

    let max_eigenvalue_error = values
        .iter()
        .map(|v| expected.iter().map(|e| (v - e.0).abs()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    let counts_match = measured.len() == expected.len()
        && measured.iter().zip(&expected).all(|(m, e)| m.1 == e.1);
    Ok(SpectrumReport {
        measured,
        expected,
        max_eigenvalue_error,
        asymmetry,
        passed: counts_match && max_eigenvalue_error <= 1e-9 && asymmetry <= 1e-10,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutationReport {
    /// `‖P_T(A(ξ)) − A(P_T(ξ))‖_max`.
    pub projector_then_average: f64,
    /// `‖P_T(A(ξ)) − C(ℓ,2)^{-1} Σ P_{T M_ij}(ξ_ij) I_ijᵀ‖_max`.
    pub against_block_sum: f64,
    pub max_discrepancy: f64,
}

/// Compares `P_T∘A_X(ξ)`, `A_X∘P_T(ξ)` and the averaged block tangent projections.
pub fn commutation_check(ctx: &AveragingContext, xi: &DenseMatrix) -> Result<CommutationReport> {
    ctx.check("commutation_check", xi)?;
    let x = &ctx.base;
    let pa = tangent_project(x, &apply_averaging(ctx, xi)?)?.into_matrix();
    let ap = apply_averaging(ctx, tangent_project(x, xi)?.matrix())?;
    let blocks = averaged_block_projection(ctx, xi)?;
    let projector_then_average = (&pa - &ap).amax();
    let against_block_sum = (&pa - &blocks).amax().max((&ap - &blocks).amax());
    Ok(CommutationReport {
        projector_then_average,
        against_block_sum,
        max_discrepancy: projector_then_average.max(against_block_sum),
    })
}

/// `C(ℓ,2)^{-1} Σ_{i<j} P_{T_{X_ij} M_{X_{−ij}}}(ξ I_ij) I_ijᵀ`.
pub fn averaged_block_projection(ctx: &AveragingContext, xi: &DenseMatrix) -> Result<DenseMatrix> {
    let pairs = ctx.partition.all_pairs();
    let terms = block_projection_terms(ctx, xi)?;
    let mut acc = DenseMatrix::zeros(xi.nrows(), xi.ncols());
    for (pair, term) in pairs.iter().zip(terms) {
        let mut cols = matrix::select_columns(&acc, pair.columns());
        cols += term;
        matrix::assign_columns(&mut acc, pair.columns(), &cols);
    }
    Ok(acc / pair_count(ctx.ell()))
}

/// `P_{T M_ij}(ξ I_ij) I_ijᵀ` for every pair, in lexicographic pair order, as `n×p` matrices.
fn block_projection_terms(ctx: &AveragingContext, xi: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
    let mut scratch = FlopCounter::new();
    ctx.partition
        .all_pairs()
        .iter()
        .map(|pair| {
            let sub = matrix::select_columns(xi, pair.columns());
            Ok(block_tangent_project(&ctx.base, pair, &sub, &mut scratch)?.into_matrix())
        })
        .collect()
}

/// Residual of `A_Y^{-1}(ξ) − A_X^{-1}(ξ) = (ℓ(ℓ−2)/2)(Y[(J−I)⊡Yᵀξ] − X[(J−I)⊡Xᵀξ])`, max-norm.
pub fn difference_identity_residual(
    partition: &Partition,
    x: &StiefelPoint,
    y: &StiefelPoint,
    xi: &DenseMatrix,
) -> Result<f64> {
    let cx = AveragingContext::new(x.clone(), partition.clone())?;
    let cy = AveragingContext::new(y.clone(), partition.clone())?;
    let lhs = apply_averaging_inverse(&cy, xi)? - apply_averaging_inverse(&cx, xi)?;
    let l = partition.ell();
    let off = DenseMatrix::from_fn(l, l, |r, c| if r == c { 0.0 } else { 1.0 });
    let side = |m: &StiefelPoint| -> Result<DenseMatrix> {
        let inner = block_hadamard(&off, &matrix::mul_tn(m.matrix(), xi)?, partition)?;
        matrix::mul(m.matrix(), &inner)
    };
    let rhs = (side(y)? - side(x)?) * ((l * (l - 2)) as f64 / 2.0);
    Ok((lhs - rhs).amax())
}

#[derive(Debug, Clone, Serialize)]
pub struct AveragedSubgradientReport {
    /// Pair average of `⟨ĝ_ij I_ijᵀ, η⟩_{A^{-1}}`.
    pub average_inner: f64,
    /// `⟨P_T g, η⟩`.
    pub full_inner: f64,
    /// Pair average of `‖ĝ_ij I_ijᵀ‖²_{A^{-1}}`.
    pub average_norm_sq: f64,
    /// `‖P_T g‖²`.
    pub full_norm_sq: f64,
    pub inner_residual: f64,
    pub norm_residual: f64,
}

/// Exact pair average of the partial Riemannian subgradients built from the Euclidean subgradient `g`,
/// measured in the `A_X^{-1}` metric, against the full Riemannian subgradient.
pub fn averaged_subgradient_check(
    ctx: &AveragingContext,
    g: &DenseMatrix,
    eta: &DenseMatrix,
) -> Result<AveragedSubgradientReport> {
    ctx.check("averaged_subgradient_check", g)?;
    ctx.check("averaged_subgradient_check", eta)?;
    let pairs = ctx.partition.all_pairs();
    let terms = block_projection_terms(ctx, g)?;
    let (mut inner_sum, mut norm_sum) = (0.0, 0.0);
    for (pair, term) in pairs.iter().zip(terms) {
        let mut embedded = DenseMatrix::zeros(g.nrows(), g.ncols());
        matrix::assign_columns(&mut embedded, pair.columns(), &term);
        let scaled = apply_averaging_inverse(ctx, &embedded)?;
        inner_sum += matrix::inner(&scaled, eta);
        norm_sum += matrix::inner(&scaled, &embedded);
    }
    let count = pair_count(ctx.ell());
    let full = tangent_project(&ctx.base, g)?;
    let average_inner = inner_sum / count;
    let average_norm_sq = norm_sum / count;
    let full_inner = matrix::inner(full.matrix(), eta);
    let full_norm_sq = full.norm().powi(2);
    Ok(AveragedSubgradientReport {
        average_inner,
        full_inner,
        average_norm_sq,
        full_norm_sq,
        inner_residual: (average_inner - full_inner).abs(),
        norm_residual: (average_norm_sq - full_norm_sq).abs(),
    })
}
