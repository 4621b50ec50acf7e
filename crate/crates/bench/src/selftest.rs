//! Size-guarded diagnostic suite behind `bench --selftest`.

use serde::Serialize;
use serde_json::{json, Value};

use rssm_core::averaging::{commutation_check, spectrum_check, AveragingContext};
use rssm_core::blocks::Partition;
use rssm_core::diagnostics::{
    adaptive_prox, check_metric_comparison, check_recursion_decrease, check_stationarity_sandwich, lambda_window,
    ProxOptions,
};
use rssm_core::matrix::polar_project;
use rssm_core::problems::rsr::gen_rsr;
use rssm_core::problems::{ProblemOracle, QuadraticProblem};
use rssm_core::stiefel::random_stiefel;
use rssm_core::{DenseMatrix, Rng64, StiefelPoint};

use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: Value,
}

fn context(x: &StiefelPoint, ell: usize) -> Result<AveragingContext> {
    Ok(AveragingContext::new(x.clone(), Partition::uniform(x.p(), ell)?)?)
}

/// A generic full-rank matrix built from random orthonormal frames.
fn mixed(n: usize, p: usize, rng: &mut Rng64) -> Result<DenseMatrix> {
    let a = random_stiefel(n, p, rng)?.into_matrix();
    let b = random_stiefel(n, p, rng)?.into_matrix();
    Ok(a * 1.7 - b * 0.6)
}

pub fn run_selftest(seed: u64) -> Result<Vec<Check>> {
    let mut rng = Rng64::from_seed_u64(seed);
    let mut checks = Vec::new();

    for (n, p, ell) in [(5, 3, 3), (6, 4, 2)] {
        let x = random_stiefel(n, p, &mut rng)?;
        let report = spectrum_check(&context(&x, ell)?)?;
        checks.push(Check { name: "averaging spectrum", passed: report.passed, detail: serde_json::to_value(&report)? });
    }

    let x = random_stiefel(8, 6, &mut rng)?;
    let report = commutation_check(&context(&x, 3)?, &mixed(8, 6, &mut rng)?)?;
    checks.push(Check {
        name: "projection commutes with averaging",
        passed: report.max_discrepancy <= 1e-10,
        detail: serde_json::to_value(&report)?,
    });

    let quad = QuadraticProblem { target: mixed(5, 2, &mut rng)? };
    let minimizer = polar_project(&quad.target)?;
    let lambda = 0.5 * lambda_window(2, quad.lipschitz(), quad.weak_convexity());
    let prox = adaptive_prox(&quad, &context(&minimizer, 2)?, lambda, &ProxOptions::default())?;
    checks.push(Check {
        name: "theta vanishes at a stationary point",
        passed: prox.theta <= 1e-4,
        detail: json!({ "theta": prox.theta, "inner_residual": prox.inner_residual }),
    });

    let rsr = gen_rsr(5, 3, 10, 15, &mut rng)?;
    let lambda = 0.5 * lambda_window(2, rsr.lipschitz(), rsr.weak_convexity());
    let x = random_stiefel(5, 2, &mut rng)?;
    let ctx = context(&x, 2)?;
    let report = check_stationarity_sandwich(&rsr, &ctx, lambda, &ProxOptions::default())?;
    checks.push(Check {
        name: "stationarity sandwich",
        passed: report.upper_holds && report.lower_holds,
        detail: serde_json::to_value(&report)?,
    });
    let report = check_recursion_decrease(&rsr, &ctx, lambda, 0.1 / rsr.lipschitz(), &ProxOptions::default())?;
    checks.push(Check { name: "sufficient decrease", passed: report.holds, detail: serde_json::to_value(&report)? });

    let x = random_stiefel(6, 4, &mut rng)?;
    let y = random_stiefel(6, 4, &mut rng)?;
    let g = mixed(6, 4, &mut rng)?;
    let lip = g.norm();
    let report = check_metric_comparison(&context(&x, 3)?, &y, &g, 0.5 / lip, lip)?;
    checks.push(Check { name: "metric comparison", passed: report.holds, detail: serde_json::to_value(&report)? });

    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        let checks = run_selftest(0).unwrap();
        assert_eq!(checks.len(), 7);
        for c in &checks {
            assert!(c.passed, "{} failed: {}", c.name, c.detail);
        }
    }
}
