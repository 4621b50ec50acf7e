//! Robust subspace recovery via dual principal component pursuit.
//!
//! Data columns are inliers drawn from a `d`-dimensional subspace `span(S)`
//! mixed with outliers in general position. Minimizing
//! `f(X) = (1/m) Σ_j ‖Xᵀỹ_j‖` over `St(n, n−d)` recovers a basis of `span(S)^⊥`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_columns, check_point, ProblemOracle};
use crate::error::{dim_err, Error, Result};
use crate::flops::FlopCounter;
use crate::matrix::{self, DenseMatrix};
use crate::stiefel::{random_stiefel, StiefelPoint};

/// Residual norms at or below this use the zero subgradient selection.
pub const KINK_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RsrInstance {
    data: DenseMatrix,
    basis: StiefelPoint,
    inlier: Vec<bool>,
    lipschitz: f64,
}

/// Cached residual products `R = ỸᵀX` (`m×p`).
#[derive(Debug, Clone)]
pub struct RsrCache {
    residuals: DenseMatrix,
}

fn unit_gaussian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> nalgebra::DVector<f64> {
    loop {
        let v = nalgebra::DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
        let norm = v.norm();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

/// Synthetic instance with `m1` inliers in a random `d`-dimensional subspace and `m2` outliers on the sphere.
pub fn gen_rsr<R: Rng + ?Sized>(n: usize, d: usize, m1: usize, m2: usize, rng: &mut R) -> Result<RsrInstance> {
    if d == 0 || d >= n {
        return Err(Error::Config(format!("need 1 ≤ d < n, got d = {d}, n = {n}")));
    }
    if m1 == 0 {
        return Err(Error::Config("need at least one inlier".into()));
    }
    let basis = random_stiefel(n, d, rng)?;
    let m = m1 + m2;
    let mut pool = DenseMatrix::zeros(n, m);
    for j in 0..m1 {
        let coeffs = unit_gaussian(d, rng);
        pool.column_mut(j).copy_from(&(basis.matrix() * coeffs));
    }
    for j in m1..m {
        pool.column_mut(j).copy_from(&unit_gaussian(n, rng));
    }
    let mut order: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let data = matrix::select_columns(&pool, &order);
    let inlier = order.iter().map(|&src| src < m1).collect();
    RsrInstance::new(data, basis, inlier)
}

impl RsrInstance {
    pub fn new(data: DenseMatrix, basis: StiefelPoint, inlier: Vec<bool>) -> Result<Self> {
        let (n, m) = data.shape();
        if basis.n() != n || basis.p() >= n {
            return dim_err("RsrInstance::new", format!("basis {}×{} incompatible with n = {n}", basis.n(), basis.p()));
        }
        if inlier.len() != m || m == 0 {
            return dim_err("RsrInstance::new", format!("{} labels for {m} data columns", inlier.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("RsrInstance data"));
        }
        let lipschitz = data.column_iter().map(|c| c.norm()).sum::<f64>() / m as f64;
        Ok(RsrInstance { data, basis, inlier, lipschitz })
    }

    /// `n×m` data matrix `Ỹ`.
    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }

    /// The planted inlier basis `S ∈ St(n,d)`.
    pub fn basis(&self) -> &StiefelPoint {
        &self.basis
    }

    pub fn inlier_mask(&self) -> &[bool] {
        &self.inlier
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.basis.p()
    }

    pub fn p(&self) -> usize {
        self.n() - self.d()
    }

    pub fn m(&self) -> usize {
        self.data.ncols()
    }

    pub fn m1(&self) -> usize {
        self.inlier.iter().filter(|&&b| b).count()
    }

    pub fn m2(&self) -> usize {
        self.m() - self.m1()
    }

    /// An orthonormal basis of `span(S)^⊥`.
    pub fn complement_basis(&self) -> Result<StiefelPoint> {
        let n = self.n();
        let proj = DenseMatrix::identity(n, n) - matrix::mul_nt(self.basis.matrix(), self.basis.matrix())?;
        top_eigenvectors(&proj, self.p(), false)
    }

    fn residuals(&self, x: &StiefelPoint, flops: &mut FlopCounter) -> Result<DenseMatrix> {
        flops.gemm(self.m(), self.n(), x.p());
        matrix::mul_tn(&self.data, x.matrix())
    }

    fn row_norms(&self, residuals: &DenseMatrix, flops: &mut FlopCounter) -> Vec<f64> {
        let mut acc = vec![0.0; residuals.nrows()];
        for col in residuals.column_iter() {
            for (a, v) in acc.iter_mut().zip(col.iter()) {
                *a += v * v;
            }
        }
        flops.elementwise(2 * residuals.len() + residuals.nrows());
        acc.into_iter().map(f64::sqrt).collect()
    }

    /// Columns `cols` of `(1/m) Σ_j ỹ_j u_jᵀ` given the full residual matrix.
    fn subgradient_columns(&self, residuals: &DenseMatrix, cols: &[usize], flops: &mut FlopCounter) -> Result<DenseMatrix> {
        let m = self.m();
        let weights: Vec<f64> = self
            .row_norms(residuals, flops)
            .into_iter()
            .map(|r| if r > KINK_THRESHOLD { 1.0 / (m as f64 * r) } else { 0.0 })
            .collect();
        let mut u = matrix::select_columns(residuals, cols);
        for mut col in u.column_iter_mut() {
            for (v, w) in col.iter_mut().zip(&weights) {
                *v *= w;
            }
        }
        flops.elementwise(m * cols.len());
        flops.gemm(self.n(), m, cols.len());
        matrix::mul(&self.data, &u)
    }

    fn value_from_residuals(&self, residuals: &DenseMatrix) -> f64 {
        self.row_norms(residuals, &mut FlopCounter::new()).iter().sum::<f64>() / self.m() as f64
    }
}

/// The `k` eigenvectors of a symmetric matrix with the largest (or smallest) eigenvalues.
fn top_eigenvectors(m: &DenseMatrix, k: usize, smallest: bool) -> Result<StiefelPoint> {
    let (values, vectors) = matrix::symmetric_eigen(m)?;
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    if !smallest {
        idx.reverse();
    }
    idx.truncate(k);
    matrix::polar_project(&matrix::select_columns(&vectors, &idx))
}

/// Spectral initialization: the `p` eigenvectors of `ỸỸᵀ` with smallest eigenvalues.
pub fn rsr_init(instance: &RsrInstance) -> Result<StiefelPoint> {
    let gram = matrix::mul_nt(&instance.data, &instance.data)?;
    top_eigenvectors(&gram, instance.p(), true)
}

/// `dist(X, S^⊥) = √(2(p − ‖(I − SSᵀ)X‖_*))`.
pub fn rsr_error(instance: &RsrInstance, x: &StiefelPoint) -> Result<f64> {
    if x.n() != instance.n() {
        return dim_err("rsr_error", format!("point has {} rows, instance has n = {}", x.n(), instance.n()));
    }
    let s = instance.basis.matrix();
    let residual = x.matrix() - s * matrix::mul_tn(s, x.matrix())?;
    let nuclear = matrix::nuclear_norm(&residual);
    Ok((2.0 * (x.p() as f64 - nuclear)).max(0.0).sqrt())
}

impl ProblemOracle for RsrInstance {
    type Cache = RsrCache;

    fn shape(&self) -> (usize, usize) {
        (self.n(), self.p())
    }

    /// `(1/m) Σ‖ỹ_j‖`, which is 1 for unit-norm data.
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn value(&self, x: &StiefelPoint) -> Result<f64> {
        check_point("rsr_value", self.shape(), x)?;
        Ok(self.value_from_residuals(&self.residuals(x, &mut FlopCounter::new())?))
    }

    fn subgradient(&self, x: &StiefelPoint, flops: &mut FlopCounter) -> Result<DenseMatrix> {
        check_point("rsr_subgradient", self.shape(), x)?;
        let r = self.residuals(x, flops)?;
        self.subgradient_columns(&r, &(0..self.p()).collect::<Vec<_>>(), flops)
    }

    fn partial_subgradient(&self, x: &StiefelPoint, cols: &[usize], flops: &mut FlopCounter) -> Result<DenseMatrix> {
        check_point("rsr_partial_subgradient", self.shape(), x)?;
        check_columns("rsr_partial_subgradient", self.p(), cols)?;
        let r = self.residuals(x, flops)?;
        self.subgradient_columns(&r, cols, flops)
    }

    fn error(&self, x: &StiefelPoint) -> Option<f64> {
        rsr_error(self, x).ok()
    }

    fn init_cache(&self, x: &StiefelPoint, flops: &mut FlopCounter) -> Result<RsrCache> {
        check_point("rsr_init_cache", self.shape(), x)?;
        Ok(RsrCache { residuals: self.residuals(x, flops)? })
    }

    fn cached_partial_subgradient(
        &self,
        cache: &RsrCache,
        _x: &StiefelPoint,
        cols: &[usize],
        flops: &mut FlopCounter,
    ) -> Result<DenseMatrix> {
        check_columns("rsr_partial_subgradient", self.p(), cols)?;
        self.subgradient_columns(&cache.residuals, cols, flops)
    }

    fn update_cache(&self, cache: &mut RsrCache, x: &StiefelPoint, cols: &[usize], flops: &mut FlopCounter) -> Result<()> {
        let fresh = matrix::mul_tn(&self.data, &matrix::select_columns(x.matrix(), cols))?;
        flops.gemm(self.m(), self.n(), cols.len());
        matrix::assign_columns(&mut cache.residuals, cols, &fresh);
        Ok(())
    }

    fn cached_value(&self, cache: &RsrCache, _x: &StiefelPoint) -> Result<f64> {
        Ok(self.value_from_residuals(&cache.residuals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    #[test]
    fn generated_columns_are_unit_and_inliers_lie_in_subspace() {
        let mut rng = Rng64::from_seed_u64(1);
        let inst = gen_rsr(12, 3, 40, 60, &mut rng).unwrap();
        assert_eq!((inst.m1(), inst.m2(), inst.p()), (40, 60, 9));
        let s = inst.basis().matrix();
        for (col, &is_in) in inst.data().column_iter().zip(inst.inlier_mask()) {
            assert!((col.norm() - 1.0).abs() < 1e-12);
            if is_in {
                let v = col.into_owned();
                assert!((&v - s * (s.transpose() * &v)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn single_point_value() {
        let data = DenseMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let basis = StiefelPoint::new(DenseMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        let inst = RsrInstance::new(data, basis, vec![false]).unwrap();
        let x = StiefelPoint::new(DenseMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert_eq!(inst.value(&x).unwrap(), 1.0);
        let perp = StiefelPoint::new(DenseMatrix::from_column_slice(2, 1, &[0.0, 1.0])).unwrap();
        assert_eq!(inst.value(&perp).unwrap(), 0.0);
        assert_eq!(inst.subgradient(&perp, &mut FlopCounter::new()).unwrap().norm(), 0.0);
    }

    #[test]
    fn outlier_free_init_recovers_complement() {
        let mut rng = Rng64::from_seed_u64(2);
        let inst = gen_rsr(10, 3, 50, 0, &mut rng).unwrap();
        let x0 = rsr_init(&inst).unwrap();
        assert_eq!(x0.p(), 7);
        assert!(rsr_error(&inst, &x0).unwrap() <= 1e-8);
        let perp = inst.complement_basis().unwrap();
        assert!(rsr_error(&inst, &perp).unwrap() <= 1e-7);
    }

    #[test]
    fn cache_matches_uncached_bitwise() {
        let mut rng = Rng64::from_seed_u64(3);
        let inst = gen_rsr(9, 2, 20, 30, &mut rng).unwrap();
        let x = random_stiefel(9, 7, &mut rng).unwrap();
        let mut flops = FlopCounter::new();
        let cache = inst.init_cache(&x, &mut flops).unwrap();
        let cols = [1, 4, 6];
        let a = inst.cached_partial_subgradient(&cache, &x, &cols, &mut flops).unwrap();
        let b = inst.partial_subgradient(&x, &cols, &mut flops).unwrap();
        assert_eq!(a, b);
        assert_eq!(inst.cached_value(&cache, &x).unwrap(), inst.value(&x).unwrap());
    }
}
