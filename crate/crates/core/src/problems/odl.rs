//! Orthogonal dictionary learning: recover `X*` from `Y = X*S` with sparse `S`
//! by minimizing `‖YᵀX‖₁` over the orthogonal group.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_columns, check_point, ProblemOracle};
use crate::error::{dim_err, Error, Result};
use crate::flops::FlopCounter;
use crate::matrix::{self, DenseMatrix};
use crate::stiefel::{random_stiefel, StiefelPoint};

#[derive(Debug, Clone)]
pub struct OdlInstance {
    data: DenseMatrix,
    dictionary: StiefelPoint,
    codes: DenseMatrix,
    theta: f64,
    lipschitz: f64,
    /// Number of dictionary atoms sought at once; `n` for the full problem.
    columns: usize,
}

/// Cached correlations `R = YᵀX` (`m×n`).
#[derive(Debug, Clone)]
pub struct OdlCache {
    correlations: DenseMatrix,
}

/// `sign` with `sign(0) = 0`.
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Random orthogonal dictionary and Bernoulli(θ)-Gaussian codes.
pub fn gen_odl<R: Rng + ?Sized>(n: usize, m: usize, theta: f64, rng: &mut R) -> Result<OdlInstance> {
    if n == 0 || m == 0 {
        return Err(Error::Config(format!("need n, m ≥ 1, got n = {n}, m = {m}")));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Config(format!("sparsity θ must lie in (0,1), got {theta}")));
    }
    let dictionary = random_stiefel(n, n, rng)?;
    let codes = DenseMatrix::from_fn(n, m, |_, _| {
        let keep = rng.random::<f64>() < theta;
        let g: f64 = rng.sample(StandardNormal);
        if keep {
            g
        } else {
            0.0
        }
    });
    OdlInstance::new(dictionary, codes, theta)
}

impl OdlInstance {
    pub fn new(dictionary: StiefelPoint, codes: DenseMatrix, theta: f64) -> Result<Self> {
        if dictionary.n() != dictionary.p() || codes.nrows() != dictionary.n() {
            return dim_err(
                "OdlInstance::new",
                format!("dictionary {}×{} and codes {:?}", dictionary.n(), dictionary.p(), codes.shape()),
            );
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("OdlInstance codes"));
        }
        let data = matrix::mul(dictionary.matrix(), &codes)?;
        let n = data.nrows() as f64;
        let lipschitz = n.sqrt() * data.column_iter().map(|c| c.norm()).sum::<f64>();
        let columns = data.nrows();
        Ok(OdlInstance { data, dictionary, codes, theta, lipschitz, columns })
    }

    /// Same data, unknown restricted to `St(n,p)`: recover `p ≤ n` atoms.
    pub fn with_columns(mut self, p: usize) -> Result<Self> {
        if p == 0 || p > self.n() {
            return dim_err("OdlInstance::with_columns", format!("need 1 ≤ p ≤ n = {}, got {p}", self.n()));
        }
        self.columns = p;
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.columns
    }

    /// `Y = X*S`.
    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }

    pub fn dictionary(&self) -> &StiefelPoint {
        &self.dictionary
    }

    pub fn codes(&self) -> &DenseMatrix {
        &self.codes
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn m(&self) -> usize {
        self.data.ncols()
    }

    fn correlations(&self, x: &StiefelPoint, flops: &mut FlopCounter) -> Result<DenseMatrix> {
        flops.gemm(self.m(), self.n(), x.p());
        matrix::mul_tn(&self.data, x.matrix())
    }

    fn subgradient_columns(&self, correlations: &DenseMatrix, cols: &[usize], flops: &mut FlopCounter) -> Result<DenseMatrix> {
        let signs = matrix::select_columns(correlations, cols).map(sign0);
        flops.elementwise(signs.len());
        flops.gemm(self.n(), self.m(), cols.len());
        matrix::mul(&self.data, &signs)
    }
}

/// `Σ_i |max_j |x_iᵀx*_j| − 1|`; zero iff `X` is a signed permutation of `X*`.
pub fn odl_error(instance: &OdlInstance, x: &StiefelPoint) -> Result<f64> {
    if x.n() != instance.n() {
        return dim_err("odl_error", format!("point has {} rows, instance has n = {}", x.n(), instance.n()));
    }
    let overlaps = matrix::mul_tn(x.matrix(), instance.dictionary.matrix())?;
    Ok(overlaps
        .row_iter()
        .map(|row| (row.iter().fold(0.0f64, |a, v| a.max(v.abs())) - 1.0).abs())
        .sum())
}

impl ProblemOracle for OdlInstance {
    type Cache = OdlCache;

    fn shape(&self) -> (usize, usize) {
        (self.n(), self.columns)
    }

    /// `√n·Σ_j‖y_j‖`, a deliberately loose bound on `‖Y·sign(YᵀX)‖_F` for any `p ≤ n`.
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn value(&self, x: &StiefelPoint) -> Result<f64> {
        check_point("odl_value", self.shape(), x)?;
        Ok(self.correlations(x, &mut FlopCounter::new())?.iter().map(|v| v.abs()).sum())
    }

    fn subgradient(&self, x: &StiefelPoint, flops: &mut FlopCounter) -> Result<DenseMatrix> {
        check_point("odl_subgradient", self.shape(), x)?;
        let r = self.correlations(x, flops)?;
        self.subgradient_columns(&r, &(0..self.columns).collect::<Vec<_>>(), flops)
    }

    fn partial_subgradient(&self, x: &StiefelPoint, cols: &[usize], flops: &mut FlopCounter) -> Result<DenseMatrix> {
        check_point("odl_partial_subgradient", self.shape(), x)?;
        check_columns("odl_partial_subgradient", self.columns, cols)?;
        let xc = matrix::select_columns(x.matrix(), cols);
        flops.gemm(self.m(), self.n(), cols.len());
        let r = matrix::mul_tn(&self.data, &xc)?;
        self.subgradient_columns(&r, &(0..cols.len()).collect::<Vec<_>>(), flops)
    }

    fn error(&self, x: &StiefelPoint) -> Option<f64> {
        odl_error(self, x).ok()
    }

    fn init_cache(&self, x: &StiefelPoint, flops: &mut FlopCounter) -> Result<OdlCache> {
        check_point("odl_init_cache", self.shape(), x)?;
        Ok(OdlCache { correlations: self.correlations(x, flops)? })
    }

    fn cached_partial_subgradient(
        &self,
        cache: &OdlCache,
        _x: &StiefelPoint,
        cols: &[usize],
        flops: &mut FlopCounter,
    ) -> Result<DenseMatrix> {
        check_columns("odl_partial_subgradient", self.columns, cols)?;
        self.subgradient_columns(&cache.correlations, cols, flops)
    }

    fn update_cache(&self, cache: &mut OdlCache, x: &StiefelPoint, cols: &[usize], flops: &mut FlopCounter) -> Result<()> {
        let fresh = matrix::mul_tn(&self.data, &matrix::select_columns(x.matrix(), cols))?;
        flops.gemm(self.m(), self.n(), cols.len());
        matrix::assign_columns(&mut cache.correlations, cols, &fresh);
        Ok(())
    }

    fn cached_value(&self, cache: &OdlCache, _x: &StiefelPoint) -> Result<f64> {
        Ok(cache.correlations.iter().map(|v| v.abs()).sum())
    }
}
