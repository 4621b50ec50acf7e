//! The randomized submanifold subgradient method (RSSM) and the full
//! Riemannian subgradient method (RSM), with telemetry.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::blocks::{block_tangent_project, rssm_block_step_in_place, sample_pair, Partition};
use crate::error::{Error, Result};
use crate::flops::FlopCounter;
use crate::problems::ProblemOracle;
use crate::rng::Rng64;
use crate::stiefel::{retract_counted, stationarity_proxy, tangent_project_counted, StiefelPoint};

/// Maximum tolerated `‖XᵀX − I‖_F` along a trajectory.
pub const DRIFT_TOLERANCE: f64 = 1e-8;

/// Factor applied to `1/L` when steps are clipped.
pub const LIPSCHITZ_CLIP_FACTOR: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Rssm,
    Rsm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `γ_k = Δ/√(ℓ(T+1))` for a fixed horizon `T`.
    ConstantHorizon,
    /// `γ_k = Δ_k/√(ℓ(k+1))`.
    Diminishing,
    /// `γ_k = Δ_k/(√(k+2)·ln(k+2))`.
    LogDamped,
}

/// The scale sequence `Δ_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaSpec {
    Constant(f64),
    /// `Δ_k = c·base^{a·ρ^k − 1}`; the experiments use `base = C(ℓ,2)`.
    Geometric { c: f64, a: f64, rho: f64, base: f64 },
}

impl DeltaSpec {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            DeltaSpec::Constant(c) => c,
            DeltaSpec::Geometric { c, a, rho, base } => c * base.powf(a * rho.powf(k as f64) - 1.0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DeltaSpec::Constant(c) => c > 0.0 && c.is_finite(),
            DeltaSpec::Geometric { c, a, rho, base } => {
                c > 0.0 && c.is_finite() && a.is_finite() && rho > 0.0 && rho.is_finite() && base > 0.0 && base.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step scale {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub delta: DeltaSpec,
    /// `T` for the constant-horizon rule.
    pub horizon: Option<usize>,
    /// The `ℓ` in the `√ℓ` normalization; 1 for RSM.
    pub ell: usize,
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        self.delta.validate()?;
        if self.ell == 0 {
            return Err(Error::Config("schedule block count must be positive".into()));
        }
        if self.kind == ScheduleKind::ConstantHorizon && self.horizon.is_none() {
            return Err(Error::Config("the constant-horizon schedule needs a horizon T".into()));
        }
        Ok(())
    }
}

/// `γ_k` for iteration `k ≥ 0`.
pub fn step_size(schedule: &StepSchedule, k: usize) -> Result<f64> {
    let ell = schedule.ell as f64;
    let gamma = match schedule.kind {
        ScheduleKind::ConstantHorizon => {
            let t = schedule
                .horizon
                .ok_or_else(|| Error::Config("the constant-horizon schedule needs a horizon T".into()))?;
            if k > t {
                return Err(Error::Config(format!("iteration {k} is past the horizon T = {t}")));
            }
            schedule.delta.at(0) / (ell * (t as f64 + 1.0)).sqrt()
        }
        ScheduleKind::Diminishing => schedule.delta.at(k) / (ell * (k as f64 + 1.0)).sqrt(),
        ScheduleKind::LogDamped => {
            let s = k as f64 + 2.0;
            schedule.delta.at(k) / (s.sqrt() * s.ln())
        }
    };
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("schedule produced an invalid stepsize {gamma} at k = {k}")));
    }
    Ok(gamma)
}

/// What to do when `γ_k ≥ 1/L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPolicy {
    /// Use the scheduled step unchanged.
    Off,
    /// Replace it by `0.999/L`.
    Clip,
}

/// Where the `seconds` telemetry column comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clock {
    /// Wall time of the iterations, telemetry excluded.
    Wall,
    /// Always zero; makes traces byte-reproducible.
    Off,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub schedule: StepSchedule,
    /// Required for RSSM, ignored by RSM.
    pub partition: Option<Partition>,
    pub max_iters: usize,
    pub seed: u64,
    /// Telemetry is recorded every `stride` iterations and at the end.
    pub stride: usize,
    pub step_policy: StepPolicy,
    /// Overrides the oracle's Lipschitz bound.
    pub lipschitz: Option<f64>,
    /// Overrides the oracle's weak-convexity modulus.
    pub weak_convexity: Option<f64>,
    /// Feasibility is verified every this many iterations (0 disables).
    pub drift_check_every: usize,
    /// Stop once the cumulative flop count reaches this value.
    pub flop_budget: Option<u64>,
    pub clock: Clock,
}

impl SolverConfig {
    pub fn new(method: Method, schedule: StepSchedule, partition: Option<Partition>, max_iters: usize, seed: u64) -> Self {
        SolverConfig {
            method,
            schedule,
            partition,
            max_iters,
            seed,
            stride: 10,
            step_policy: StepPolicy::Off,
            lipschitz: None,
            weak_convexity: None,
            drift_check_every: 100,
            flop_budget: None,
            clock: Clock::Wall,
        }
    }

    fn validate(&self, p: usize) -> Result<()> {
        self.schedule.validate()?;
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("telemetry stride must be at least 1".into()));
        }
        if let Some(t) = self.schedule.horizon {
            if self.schedule.kind == ScheduleKind::ConstantHorizon && t + 1 < self.max_iters {
                return Err(Error::Config(format!("horizon T = {t} is shorter than {} iterations", self.max_iters)));
            }
        }
        if self.method == Method::Rssm {
            let part = self
                .partition
                .as_ref()
                .ok_or_else(|| Error::Config("RSSM needs a column partition".into()))?;
            if part.p() != p {
                return Err(Error::Config(format!("partition covers {} columns, the problem has p = {p}", part.p())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Cumulative flops of the algorithm (telemetry excluded).
    pub flops: u64,
    pub seconds: f64,
    pub f: f64,
    /// Ground-truth error, NaN when the problem has none.
    pub err: f64,
    /// `‖P_{T_X St}(g)‖` for the oracle's full subgradient `g`.
    pub proxy: f64,
    /// Stepsize used by the update that produced this iterate (`γ_0` at iteration 0).
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub method: Method,
    pub records: Vec<TraceRecord>,
    pub final_point: StiefelPoint,
    pub iterations: usize,
    pub total_flops: u64,
    /// Flops spent in block projections and block steps only.
    pub update_flops: u64,
    pub max_feasibility_violation: f64,
    pub lipschitz: f64,
    pub weak_convexity: f64,
    pub budget_exhausted: bool,
}

struct Telemetry {
    records: Vec<TraceRecord>,
    elapsed: Duration,
    clock: Clock,
}

impl Telemetry {
    fn seconds(&self) -> f64 {
        match self.clock {
            Clock::Wall => self.elapsed.as_secs_f64(),
            Clock::Off => 0.0,
        }
    }

    fn record<P: ProblemOracle>(
        &mut self,
        problem: &P,
        cache: &P::Cache,
        x: &StiefelPoint,
        iter: usize,
        flops: u64,
        step: f64,
    ) -> Result<()> {
        let all: Vec<usize> = (0..x.p()).collect();
        let g = problem.cached_partial_subgradient(cache, x, &all, &mut FlopCounter::new())?;
        let rec = TraceRecord {
            iter,
            flops,
            seconds: self.seconds(),
            f: problem.cached_value(cache, x)?,
            err: problem.error(x).unwrap_or(f64::NAN),
            proxy: stationarity_proxy(x, &g)?,
            step,
        };
        if !rec.f.is_finite() {
            return Err(Error::NonFinite("objective value"));
        }
        self.records.push(rec);
        Ok(())
    }
}

fn start<P: ProblemOracle>(problem: &P, x0: &StiefelPoint, config: &SolverConfig) -> Result<(f64, f64)> {
    let shape = problem.shape();
    if (x0.n(), x0.p()) != shape {
        return Err(Error::Dimension {
            op: "solver",
            detail: format!("initial point is {}×{}, problem is {}×{}", x0.n(), x0.p(), shape.0, shape.1),
        });
    }
    let violation = x0.feasibility_violation();
    if violation > DRIFT_TOLERANCE {
        return Err(Error::Infeasible { violation });
    }
    config.validate(shape.1)?;
    let lipschitz = config.lipschitz.unwrap_or_else(|| problem.lipschitz());
    let tau = config.weak_convexity.unwrap_or_else(|| problem.weak_convexity());
    Ok((lipschitz, tau))
}

fn policy_step(config: &SolverConfig, lipschitz: f64, k: usize) -> Result<f64> {
    let gamma = step_size(&config.schedule, k)?;
    Ok(match config.step_policy {
        StepPolicy::Clip if lipschitz > 0.0 => gamma.min(LIPSCHITZ_CLIP_FACTOR / lipschitz),
        _ => gamma,
    })
}

fn drift_check(config: &SolverConfig, x: &StiefelPoint, iter: usize, worst: &mut f64) -> Result<()> {
    if config.drift_check_every > 0 && iter % config.drift_check_every == 0 {
        let v = x.feasibility_violation();
        *worst = worst.max(v);
        if v > DRIFT_TOLERANCE {
            return Err(Error::FeasibilityDrift { iter, violation: v });
        }
    }
    Ok(())
}

/// Runs the randomized submanifold subgradient method from `x0`.
///
/// Each iteration samples a block pair, queries the partial subgradient for
/// its columns, projects it onto the tangent space of the submanifold block
/// and takes a polar-retracted step on those columns only.
pub fn run_rssm<P: ProblemOracle>(problem: &P, x0: &StiefelPoint, config: &SolverConfig) -> Result<RunTrace> {
    if config.method != Method::Rssm {
        return Err(Error::Config("run_rssm called with a non-RSSM configuration".into()));
    }
    let (lipschitz, tau) = start(problem, x0, config)?;
    let partition = config.partition.as_ref().expect("validated");
    let mut rng = Rng64::from_seed_u64(config.seed);
    let mut x = x0.clone();
    let mut flops = FlopCounter::new();
    let mut update = FlopCounter::new();
    let mut telemetry = Telemetry { records: Vec::new(), elapsed: Duration::ZERO, clock: config.clock };

    let t = Instant::now();
    let mut cache = problem.init_cache(&x, &mut flops)?;
    telemetry.elapsed += t.elapsed();
    let mut worst = x.feasibility_violation();
    telemetry.record(problem, &cache, &x, 0, flops.total(), policy_step(config, lipschitz, 0)?)?;

    let mut budget_exhausted = false;
    let mut iterations = 0;
    for k in 0..config.max_iters {
        let t = Instant::now();
        let gamma = policy_step(config, lipschitz, k)?;
        let pair = sample_pair(partition, &mut rng);
        let euclid = problem.cached_partial_subgradient(&cache, &x, pair.columns(), &mut flops)?;
        let before = flops.total();
        let g = block_tangent_project(&x, &pair, &euclid, &mut flops)?;
        rssm_block_step_in_place(&mut x, &g, gamma, &mut flops)?;
        update.add(flops.total() - before);
        problem.update_cache(&mut cache, &x, pair.columns(), &mut flops)?;
        telemetry.elapsed += t.elapsed();

        iterations = k + 1;
        drift_check(config, &x, iterations, &mut worst)?;
        budget_exhausted = config.flop_budget.is_some_and(|b| flops.total() >= b);
        if iterations % config.stride == 0 || iterations == config.max_iters || budget_exhausted {
            telemetry.record(problem, &cache, &x, iterations, flops.total(), gamma)?;
        }
        if budget_exhausted {
            break;
        }
    }
    worst = worst.max(x.feasibility_violation());
    log::debug!("rssm finished {iterations} iterations, {} flops", flops.total());
    Ok(RunTrace {
        method: Method::Rssm,
        records: telemetry.records,
        final_point: x,
        iterations,
        total_flops: flops.total(),
        update_flops: update.total(),
        max_feasibility_violation: worst,
        lipschitz,
        weak_convexity: tau,
        budget_exhausted,
    })
}

/// Runs the full Riemannian subgradient method `X⁺ = Retr_X(−γ_k·P_{T_X St}(g))`.
pub fn run_rsm<P: ProblemOracle>(problem: &P, x0: &StiefelPoint, config: &SolverConfig) -> Result<RunTrace> {
    if config.method != Method::Rsm {
        return Err(Error::Config("run_rsm called with a non-RSM configuration".into()));
    }
    let (lipschitz, tau) = start(problem, x0, config)?;
    let all: Vec<usize> = (0..x0.p()).collect();
    let mut x = x0.clone();
    let mut flops = FlopCounter::new();
    let mut update = FlopCounter::new();
    let mut telemetry = Telemetry { records: Vec::new(), elapsed: Duration::ZERO, clock: config.clock };

    let t = Instant::now();
    let mut cache = problem.init_cache(&x, &mut flops)?;
    telemetry.elapsed += t.elapsed();
    let mut worst = x.feasibility_violation();
    telemetry.record(problem, &cache, &x, 0, flops.total(), policy_step(config, lipschitz, 0)?)?;

    let mut budget_exhausted = false;
    let mut iterations = 0;
    for k in 0..config.max_iters {
        let t = Instant::now();
        let gamma = policy_step(config, lipschitz, k)?;
        let euclid = problem.cached_partial_subgradient(&cache, &x, &all, &mut flops)?;
        let before = flops.total();
        let xi = tangent_project_counted(&x, &euclid, &mut flops)?;
        if xi.matrix().iter().any(|&v| v != 0.0) {
            x = retract_counted(&x, &xi.scaled(-gamma), &mut flops)?;
        }
        update.add(flops.total() - before);
        problem.update_cache(&mut cache, &x, &all, &mut flops)?;
        telemetry.elapsed += t.elapsed();

        iterations = k + 1;
        drift_check(config, &x, iterations, &mut worst)?;
        budget_exhausted = config.flop_budget.is_some_and(|b| flops.total() >= b);
        if iterations % config.stride == 0 || iterations == config.max_iters || budget_exhausted {
            telemetry.record(problem, &cache, &x, iterations, flops.total(), gamma)?;
        }
        if budget_exhausted {
            break;
        }
    }
    worst = worst.max(x.feasibility_violation());
    log::debug!("rsm finished {iterations} iterations, {} flops", flops.total());
    Ok(RunTrace {
        method: Method::Rsm,
        records: telemetry.records,
        final_point: x,
        iterations,
        total_flops: flops.total(),
        update_flops: update.total(),
        max_feasibility_violation: worst,
        lipschitz,
        weak_convexity: tau,
        budget_exhausted,
    })
}

/// Dispatches on `config.method`.
pub fn run<P: ProblemOracle>(problem: &P, x0: &StiefelPoint, config: &SolverConfig) -> Result<RunTrace> {
    match config.method {
        Method::Rssm => run_rssm(problem, x0, config),
        Method::Rsm => run_rsm(problem, x0, config),
    }
}
