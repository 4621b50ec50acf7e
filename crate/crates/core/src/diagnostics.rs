//! Numerical certificates for the analysis: the adaptive proximal map and
//! Moreau envelope, the surrogate stationarity measure `Θ`, and sampled
//! checks of the inequalities that drive the convergence proof.
//!
//! Everything here is meant for small instances (`n·p ≤ 200`). The true
//! Riemannian subdifferential distance `dist(0, ∂_St f(X))` is replaced by
//! the norm of the projected oracle subgradient, which can only overestimate it.

use serde::Serialize;

use crate::averaging::{apply_averaging_inverse, mahalanobis_norm_sq, pair_count, AveragingContext};
use crate::blocks::{block_tangent_project, rssm_block_step};
use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::matrix::{self, DenseMatrix};
use crate::problems::ProblemOracle;
use crate::stiefel::{retract, stationarity_proxy, tangent_project, StiefelPoint, TangentVector};

/// Largest `n·p` accepted by the diagnostics.
pub const DIAGNOSTIC_SIZE_LIMIT: usize = 200;

pub const SUBSTITUTION_NOTE: &str = "dist(0, ∂f) is replaced by the norm of the projected oracle subgradient";

fn size_guard(x: &StiefelPoint) -> Result<()> {
    let size = x.n() * x.p();
    if size > DIAGNOSTIC_SIZE_LIMIT {
        return Err(Error::SizeGuard { what: "n·p for diagnostics", limit: DIAGNOSTIC_SIZE_LIMIT, got: size });
    }
    Ok(())
}

/// Upper end of the admissible range `λ ∈ (0, ℓ/(2(τ + (2ℓ−1)L)))`.
pub fn lambda_window(ell: usize, lipschitz: f64, tau: f64) -> f64 {
    let denom = 2.0 * (tau + (2.0 * ell as f64 - 1.0) * lipschitz);
    if denom > 0.0 {
        ell as f64 / denom
    } else {
        f64::INFINITY
    }
}

/// Strong-convexity margin `ℓ/(2λ) − τ − (2ℓ−1)L` of the prox subproblem.
fn prox_margin(ell: usize, lambda: f64, lipschitz: f64, tau: f64) -> f64 {
    ell as f64 / (2.0 * lambda) - tau - (2.0 * ell as f64 - 1.0) * lipschitz
}

#[derive(Debug, Clone)]
pub struct ProxOptions {
    pub max_iters: usize,
    /// Stop once the Riemannian subgradient norm of `h_X` drops below this.
    pub tol: f64,
    /// Starting point of the inner solver; `X` itself when absent.
    pub start: Option<StiefelPoint>,
}

impl Default for ProxOptions {
    fn default() -> Self {
        ProxOptions { max_iters: 50_000, tol: 1e-6, start: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProxResult {
    #[serde(skip)]
    pub prox_point: StiefelPoint,
    /// `f_λ(X)`, evaluated as `h_X` at the returned point.
    pub envelope: f64,
    /// `Θ = (1/λ)‖P − X‖_{A_X^{-1}}`.
    pub theta: f64,
    /// `‖P − X‖_F`.
    pub displacement: f64,
    pub inner_iters: usize,
    /// Riemannian subgradient norm of `h_X` at the returned point.
    pub inner_residual: f64,
    pub converged: bool,
    /// Best `h_X` value seen, sampled every 1000 inner iterations.
    pub best_history: Vec<f64>,
}

/// Approximates `P_λ(X) = argmin_{Y ∈ St} f(Y) + (1/2λ)‖Y − X‖²_{A_X^{-1}}`.
///
/// Inner solver: Riemannian subgradient descent on `h_X` with steps
/// `c/√(k+1)`, `c = λℓ/(ℓ + 2λ(τ + (2ℓ−1)L))`, keeping the best iterate.
pub fn adaptive_prox<P: ProblemOracle>(
    problem: &P,
    ctx: &AveragingContext,
    lambda: f64,
    opts: &ProxOptions,
) -> Result<ProxResult> {
    let x = ctx.base();
    size_guard(x)?;
    let ell = ctx.ell();
    let (lip, tau) = (problem.lipschitz(), problem.weak_convexity());
    let window = lambda_window(ell, lip, tau);
    if !(lambda > 0.0 && lambda < window) {
        return Err(Error::Config(format!("λ = {lambda} outside the admissible window (0, {window})")));
    }
    let c = lambda * ell as f64 / (ell as f64 + 2.0 * lambda * (tau + (2.0 * ell as f64 - 1.0) * lip));

    let h = |y: &StiefelPoint| -> Result<f64> {
        let d = y.matrix() - x.matrix();
        Ok(problem.value(y)? + mahalanobis_norm_sq(ctx, &d)? / (2.0 * lambda))
    };
    let riemannian_grad = |y: &StiefelPoint| -> Result<TangentVector> {
        let mut g = problem.subgradient(y, &mut FlopCounter::new())?;
        g += apply_averaging_inverse(ctx, &(y.matrix() - x.matrix()))? / lambda;
        tangent_project(y, &g)
    };

    let mut y = opts.start.clone().unwrap_or_else(|| x.clone());
    let mut best = (h(&y)?, y.clone());
    let mut history = vec![best.0];
    let mut iters = 0;
    for k in 0..opts.max_iters {
        let g = riemannian_grad(&y)?;
        if g.norm() <= opts.tol {
            break;
        }
        y = retract(&y, &g.scaled(-c / ((k + 1) as f64).sqrt()))?;
        iters = k + 1;
        let hy = h(&y)?;
        if !hy.is_finite() {
            return Err(Error::NonFinite("prox subproblem objective"));
        }
        if hy < best.0 {
            best = (hy, y.clone());
        }
        if iters % 1000 == 0 {
            history.push(best.0);
        }
    }
    if *history.last().expect("nonempty") != best.0 {
        history.push(best.0);
    }
    let (envelope, point) = best;
    let residual = riemannian_grad(&point)?.norm();
    let diff = point.matrix() - x.matrix();
    let theta = mahalanobis_norm_sq(ctx, &diff)?.sqrt() / lambda;
    Ok(ProxResult {
        displacement: diff.norm(),
        prox_point: point,
        envelope,
        theta,
        inner_iters: iters,
        inner_residual: residual,
        converged: residual <= opts.tol,
        best_history: history,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    pub theta: f64,
    /// Projected subgradient norm at the prox point.
    pub upper_lhs: f64,
    /// `√C(ℓ,2)·Θ`.
    pub upper_rhs: f64,
    /// Allowance for the inexact prox point, `10·inner_residual`.
    pub upper_tolerance: f64,
    pub upper_holds: bool,
    /// `((ℓ/2 − λ(τ+L))/√(2ℓ))·Θ`.
    pub lower_lhs: f64,
    /// Projected subgradient norm at `X`.
    pub lower_rhs: f64,
    pub lower_tolerance: f64,
    pub lower_holds: bool,
    pub inner_residual: f64,
    pub note: &'static str,
}

/// Checks both two-sided bounds relating `Θ` to stationarity at `X` and at its prox point.
pub fn check_stationarity_sandwich<P: ProblemOracle>(
    problem: &P,
    ctx: &AveragingContext,
    lambda: f64,
    opts: &ProxOptions,
) -> Result<SandwichReport> {
    let prox = adaptive_prox(problem, ctx, lambda, opts)?;
    let ell = ctx.ell();
    let (lip, tau) = (problem.lipschitz(), problem.weak_convexity());
    let mut scratch = FlopCounter::new();
    let upper_lhs = stationarity_proxy(&prox.prox_point, &problem.subgradient(&prox.prox_point, &mut scratch)?)?;
    let upper_rhs = pair_count(ell).sqrt() * prox.theta;
    let upper_tolerance = 10.0 * prox.inner_residual;

    let coef = (ell as f64 / 2.0 - lambda * (tau + lip)) / (2.0 * ell as f64).sqrt();
    let lower_lhs = coef * prox.theta;
    let x = ctx.base();
    let lower_rhs = stationarity_proxy(x, &problem.subgradient(x, &mut scratch)?)?;
    let margin = prox_margin(ell, lambda, lip, tau).max(f64::MIN_POSITIVE);
    // ‖P̂ − P‖ ≤ residual/margin, so Θ̂ is off by at most √C(ℓ,2)·residual/(λ·margin).
    let theta_error = pair_count(ell).sqrt() * prox.inner_residual / (lambda * margin);
    let lower_tolerance = coef * theta_error + 1e-12;
    Ok(SandwichReport {
        theta: prox.theta,
        upper_lhs,
        upper_rhs,
        upper_tolerance,
        upper_holds: upper_lhs <= upper_rhs + upper_tolerance + 1e-12,
        lower_lhs,
        lower_rhs,
        lower_tolerance,
        lower_holds: lower_lhs <= lower_rhs + lower_tolerance,
        inner_residual: prox.inner_residual,
        note: SUBSTITUTION_NOTE,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecreaseReport {
    pub gamma: f64,
    pub lambda: f64,
    pub theta: f64,
    /// `γΘ²`.
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    /// Allowance for the inexact prox evaluations.
    pub tolerance: f64,
    pub holds: bool,
    pub envelope: f64,
    /// Exact average of `f_λ(X⁺)` over all block pairs.
    pub expected_next_envelope: f64,
    pub pairs: usize,
    pub max_inner_residual: f64,
}

/// Verifies the one-step sufficient decrease of the adaptive Moreau envelope,
/// taking the expectation exactly over every block pair.
pub fn check_recursion_decrease<P: ProblemOracle>(
    problem: &P,
    ctx: &AveragingContext,
    lambda: f64,
    gamma: f64,
    opts: &ProxOptions,
) -> Result<DecreaseReport> {
    let x = ctx.base();
    size_guard(x)?;
    let (lip, tau) = (problem.lipschitz(), problem.weak_convexity());
    if !(gamma > 0.0 && gamma * lip < 1.0) {
        return Err(Error::Config(format!("γ = {gamma} must lie in (0, 1/L) with L = {lip}")));
    }
    let ell = ctx.ell();
    let lf = ell as f64;
    let margin = prox_margin(ell, lambda, lip, tau).max(f64::MIN_POSITIVE);
    let envelope_error = |res: f64| res * res / (2.0 * margin);

    let here = adaptive_prox(problem, ctx, lambda, opts)?;
    let mut max_res = here.inner_residual;
    let mut next_sum = 0.0;
    let mut next_err = 0.0;
    let pairs = ctx.partition().all_pairs();
    let mut scratch = FlopCounter::new();
    for pair in &pairs {
        let euclid = problem.partial_subgradient(x, pair.columns(), &mut scratch)?;
        let g = block_tangent_project(x, pair, &euclid, &mut scratch)?;
        let moved = rssm_block_step(x, &g, gamma, &mut scratch)?;
        let next = adaptive_prox(problem, &ctx.rebased(moved)?, lambda, opts)?;
        max_res = max_res.max(next.inner_residual);
        next_sum += next.envelope;
        next_err += envelope_error(next.inner_residual);
    }
    let count = pairs.len() as f64;
    let expected_next_envelope = next_sum / count;

    let (g2, g3, g4) = (gamma * gamma, gamma.powi(3), gamma.powi(4));
    let (l2, l3, l4) = (lip * lip, lip.powi(3), lip.powi(4));
    let numerator = here.envelope - expected_next_envelope
        + 9.0 * g2 * l2 / (2.0 * lambda)
        + 2.0 * (lf - 2.0) * g3 * l3 / lambda
        + (lf - 2.0) * g4 * l4 / (2.0 * lambda);
    let denominator = (lambda / lf) * (lf / (2.0 * lambda) - (tau + (2.0 * lf - 3.0) * lip));
    let rhs = numerator / denominator;
    let lhs = gamma * here.theta * here.theta;

    let theta_error = pair_count(ell).sqrt() * here.inner_residual / (lambda * margin);
    let tolerance = (next_err / count + envelope_error(here.inner_residual)) / denominator
        + gamma * (2.0 * here.theta * theta_error + theta_error * theta_error)
        + 1e-12;
    Ok(DecreaseReport {
        gamma,
        lambda,
        theta: here.theta,
        lhs,
        rhs,
        slack: rhs - lhs,
        tolerance,
        holds: lhs <= rhs + tolerance,
        envelope: here.envelope,
        expected_next_envelope,
        pairs: pairs.len(),
        max_inner_residual: max_res,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricComparisonReport {
    /// Pair average of `‖Y − X⁺‖²_{A_{X⁺}^{-1}}`.
    pub lhs: f64,
    /// Pair average of `‖Y − X⁺‖²_{A_X^{-1}}`.
    pub same_metric: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

/// Compares the metric at the updated point with the metric at `X`, averaged exactly over all block pairs.
///
/// `g` is the full Euclidean subgradient at `X`; each pair uses its columns.
/// `γ = 0` is accepted and leaves `X⁺ = X`.
pub fn check_metric_comparison(
    ctx: &AveragingContext,
    y: &StiefelPoint,
    g: &DenseMatrix,
    gamma: f64,
    lipschitz: f64,
) -> Result<MetricComparisonReport> {
    let x = ctx.base();
    size_guard(x)?;
    matrix::check_same_shape("check_metric_comparison", x.matrix(), y.matrix())?;
    matrix::check_same_shape("check_metric_comparison", x.matrix(), g)?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("γ = {gamma} must be nonnegative")));
    }
    let pairs = ctx.partition().all_pairs();
    let mut scratch = FlopCounter::new();
    let (mut lhs, mut same) = (0.0, 0.0);
    for pair in &pairs {
        let moved = if gamma == 0.0 {
            x.clone()
        } else {
            let sub = matrix::select_columns(g, pair.columns());
            let gij = block_tangent_project(x, pair, &sub, &mut scratch)?;
            rssm_block_step(x, &gij, gamma, &mut scratch)?
        };
        let d = y.matrix() - moved.matrix();
        lhs += mahalanobis_norm_sq(&ctx.rebased(moved)?, &d)?;
        same += mahalanobis_norm_sq(ctx, &d)?;
    }
    let count = pairs.len() as f64;
    lhs /= count;
    same /= count;
    let l2 = ctx.ell() as f64 - 2.0;
    let dist = (y.matrix() - x.matrix()).norm();
    let (gl, d2) = (gamma * lipschitz, dist * dist);
    let rhs = same + 2.0 * l2 * gl * d2 + l2 * gl * gl * (d2 + 2.0 * dist) + l2 * gl.powi(3) * (d2 + 1.0);
    Ok(MetricComparisonReport {
        lhs,
        same_metric: same,
        rhs,
        slack: rhs - lhs,
        holds: lhs <= rhs + 1e-10 * rhs.abs().max(1.0),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricDifferenceReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `|(‖ξ‖²_{A_{X⁺}^{-1}} − ‖ξ‖²_{A_X^{-1}}) − (‖ζ‖²_{A_{X⁺}^{-1}} − ‖ζ‖²_{A_X^{-1}})| ≤ (ℓ(ℓ−2)/√2)‖X⁺ − X‖‖ξ − ζ‖`.
pub fn check_metric_difference(
    ctx: &AveragingContext,
    moved: &StiefelPoint,
    xi: &DenseMatrix,
    zeta: &DenseMatrix,
) -> Result<MetricDifferenceReport> {
    size_guard(ctx.base())?;
    let other = ctx.rebased(moved.clone())?;
    let delta = |v: &DenseMatrix| -> Result<f64> { Ok(mahalanobis_norm_sq(&other, v)? - mahalanobis_norm_sq(ctx, v)?) };
    let lhs = (delta(xi)? - delta(zeta)?).abs();
    let l = ctx.ell() as f64;
    let rhs = l * (l - 2.0) / 2f64.sqrt() * (moved.matrix() - ctx.base().matrix()).norm() * (xi - zeta).norm();
    Ok(MetricDifferenceReport { lhs, rhs, holds: lhs <= rhs + 1e-10 * (1.0 + rhs) })
}
