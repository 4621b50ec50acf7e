//! Experiment grids and their validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use rssm_core::averaging::pair_count;
use rssm_core::solvers::{Clock, DeltaSpec, Method, ScheduleKind, StepSchedule};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSpec {
    Rsr { n: usize, d: usize, m1: usize, m2: usize },
    Odl { n: usize, m: usize, theta: f64 },
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Rsr { .. } => "rsr",
            ProblemSpec::Odl { .. } => "odl",
        }
    }

    /// Number of columns of the unknown.
    pub fn p(&self) -> usize {
        match *self {
            ProblemSpec::Rsr { n, d, .. } => n.saturating_sub(d),
            ProblemSpec::Odl { n, .. } => n,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ProblemSpec::Rsr { n, d, m1, m2 } => {
                if d == 0 || d >= n {
                    return Err(BenchError::Config(format!("rsr needs 0 < d < n, got d = {d}, n = {n}")));
                }
                if m1 == 0 || m2 == 0 {
                    return Err(BenchError::Config("rsr needs m1 ≥ 1 and m2 ≥ 1".into()));
                }
            }
            ProblemSpec::Odl { n, m, theta } => {
                if n == 0 || m == 0 {
                    return Err(BenchError::Config("odl needs n ≥ 1 and m ≥ 1".into()));
                }
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(BenchError::Config(format!("odl needs θ ∈ (0, 1), got {theta}")));
                }
            }
        }
        Ok(())
    }
}

/// Step-size family shared by all cells; scales are resolved per method and `ℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    /// Base scale `c`; RSM always uses the constant `Δ = c`.
    pub c: f64,
    /// Exponent `a` of the geometric scale `c·C(ℓ,2)^{a·ρ^k − 1}` used by RSSM.
    pub a: Option<f64>,
    pub rho: Option<f64>,
    /// A constant `Δ` for every method, overriding `c`, `a` and `ρ`.
    pub delta: Option<f64>,
    /// Horizon `T` of the constant-horizon rule; defaults to `iters − 1`.
    pub horizon: Option<usize>,
}

impl ScheduleSpec {
    pub fn resolve(&self, method: Method, ell: usize, iters: usize) -> StepSchedule {
        let delta = match (self.delta, method, self.a) {
            (Some(d), _, _) => DeltaSpec::Constant(d),
            (None, Method::Rssm, Some(a)) => DeltaSpec::Geometric {
                c: self.c,
                a,
                rho: self.rho.unwrap_or(1.0),
                base: pair_count(ell),
            },
            _ => DeltaSpec::Constant(self.c),
        };
        StepSchedule {
            kind: self.kind,
            delta,
            horizon: match self.kind {
                ScheduleKind::ConstantHorizon => Some(self.horizon.unwrap_or(iters.saturating_sub(1))),
                _ => None,
            },
            ell: if method == Method::Rssm { ell } else { 1 },
        }
    }

    fn validate(&self, iters: usize) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.c) {
            return Err(BenchError::Config(format!("step scale c must be positive, got {}", self.c)));
        }
        if let Some(d) = self.delta {
            if !positive(d) {
                return Err(BenchError::Config(format!("Δ must be positive, got {d}")));
            }
        }
        if let Some(a) = self.a {
            if !a.is_finite() {
                return Err(BenchError::Config(format!("exponent a must be finite, got {a}")));
            }
            match self.rho {
                Some(rho) if positive(rho) => {}
                Some(rho) => return Err(BenchError::Config(format!("ρ must be positive, got {rho}"))),
                None => return Err(BenchError::Config("a geometric scale needs ρ".into())),
            }
        }
        if let Some(t) = self.horizon {
            if self.kind != ScheduleKind::ConstantHorizon {
                return Err(BenchError::Config("a horizon only applies to the constant-horizon schedule".into()));
            }
            if t + 1 < iters {
                return Err(BenchError::Config(format!("horizon T = {t} is shorter than {iters} iterations")));
            }
        }
        Ok(())
    }
}

/// Where the problem instance comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InstanceSource {
    /// A fresh instance per master seed.
    Generate(ProblemSpec),
    /// One instance file shared by every seed.
    Load(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSource,
    /// Block counts for RSSM; RSM runs once per seed.
    pub ells: Vec<usize>,
    pub methods: Vec<Method>,
    pub schedule: ScheduleSpec,
    pub iters: usize,
    pub seeds: Vec<u64>,
    pub stride: usize,
    pub enforce_lipschitz: bool,
    pub shuffle_partition: bool,
    pub flop_budget: Option<u64>,
    pub timing: Clock,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub save_instance: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Checks everything that does not need the instance itself.
    pub fn validate(&self) -> Result<()> {
        if let InstanceSource::Generate(spec) = &self.instance {
            spec.validate()?;
        }
        if self.methods.is_empty() {
            return Err(BenchError::Config("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(BenchError::Config("at least one seed is required".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(BenchError::Config("seeds must be distinct".into()));
        }
        if self.methods.contains(&Method::Rssm) && self.ells.is_empty() {
            return Err(BenchError::Config("RSSM needs at least one block count ℓ".into()));
        }
        if self.iters == 0 {
            return Err(BenchError::Config("iters must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(BenchError::Config("stride must be at least 1".into()));
        }
        if self.jobs == 0 {
            return Err(BenchError::Config("jobs must be at least 1".into()));
        }
        if self.flop_budget == Some(0) {
            return Err(BenchError::Config("flop budget must be positive".into()));
        }
        if self.save_instance.is_some() {
            if matches!(self.instance, InstanceSource::Load(_)) {
                return Err(BenchError::Config("--save-instance and --load-instance are exclusive".into()));
            }
            if self.seeds.len() != 1 {
                return Err(BenchError::Config("--save-instance needs exactly one seed".into()));
            }
        }
        self.schedule.validate(self.iters)?;
        if let InstanceSource::Generate(spec) = &self.instance {
            self.validate_blocks(spec.p())?;
        }
        Ok(())
    }

    /// Checks the block counts against the number of columns `p`.
    pub fn validate_blocks(&self, p: usize) -> Result<()> {
        if self.methods.contains(&Method::Rssm) {
            for &ell in &self.ells {
                if ell < 2 || ell > p {
                    return Err(BenchError::Config(format!("ℓ = {ell} must satisfy 2 ≤ ℓ ≤ p = {p}")));
                }
            }
        }
        Ok(())
    }
}
