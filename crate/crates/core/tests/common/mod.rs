#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use rssm_core::stiefel::{random_stiefel, tangent_project};
use rssm_core::{DenseMatrix, Rng64, StiefelPoint, TangentVector};

pub fn gaussian(r: usize, c: usize, rng: &mut Rng64) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn point(n: usize, p: usize, rng: &mut Rng64) -> StiefelPoint {
    random_stiefel(n, p, rng).unwrap()
}

/// Random tangent vector at `x` with Frobenius norm `scale`.
pub fn tangent(x: &StiefelPoint, scale: f64, rng: &mut Rng64) -> TangentVector {
    let t = tangent_project(x, &gaussian(x.n(), x.p(), rng)).unwrap();
    let norm = t.norm();
    t.scaled(scale / norm)
}
