//! Runs every (seed, method, ℓ) cell of an experiment and persists the traces.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use rssm_core::blocks::Partition;
use rssm_core::problems::io::{load_instance, save_instance, Instance};
use rssm_core::problems::odl::gen_odl;
use rssm_core::problems::rsr::{gen_rsr, rsr_init};
use rssm_core::rng::derive_seed;
use rssm_core::solvers::{run, Method, RunTrace, SolverConfig, StepPolicy};
use rssm_core::stiefel::random_stiefel;
use rssm_core::{Rng64, StiefelPoint};

use crate::config::{ExperimentConfig, InstanceSource, ProblemSpec};
use crate::error::{BenchError, Result};
use crate::trace_io::emit_csv;

/// `git describe`-style identifier baked in at build time.
pub const BUILD_VERSION: &str = env!("RSSM_BUILD_VERSION");

pub const MANIFEST_NAME: &str = "manifest.json";

// Child streams of a master seed.
const INSTANCE_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const CELL_STREAM_BASE: u64 = 2;

/// Seed of the RSSM cell with `ell` blocks under `master`; RSM draws no random numbers.
pub fn cell_seed(master: u64, method: Method, ell: Option<usize>) -> u64 {
    match method {
        Method::Rssm => derive_seed(master, CELL_STREAM_BASE + ell.unwrap_or(0) as u64),
        Method::Rsm => derive_seed(master, CELL_STREAM_BASE),
    }
}

/// Instance and shared starting point for one master seed.
struct SeedSetup {
    seed: u64,
    instance: Instance,
    x0: StiefelPoint,
}

fn generate(spec: &ProblemSpec, seed: u64) -> Result<Instance> {
    let mut rng = Rng64::from_seed_u64(derive_seed(seed, INSTANCE_STREAM));
    Ok(match *spec {
        ProblemSpec::Rsr { n, d, m1, m2 } => Instance::Rsr(gen_rsr(n, d, m1, m2, &mut rng)?),
        ProblemSpec::Odl { n, m, theta } => Instance::Odl(gen_odl(n, m, theta, &mut rng)?),
    })
}

/// Spectral initialization for RSR, a uniformly random orthogonal matrix for ODL.
fn initial_point(instance: &Instance, seed: u64) -> Result<StiefelPoint> {
    Ok(match instance {
        Instance::Rsr(inst) => rsr_init(inst)?,
        Instance::Odl(inst) => {
            let mut rng = Rng64::from_seed_u64(derive_seed(seed, INIT_STREAM));
            random_stiefel(inst.n(), inst.n(), &mut rng)?
        }
    })
}

fn instance_p(instance: &Instance) -> usize {
    match instance {
        Instance::Rsr(inst) => inst.p(),
        Instance::Odl(inst) => inst.n(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellOutcome {
    pub problem: &'static str,
    pub method: Method,
    /// Block count; absent for RSM.
    pub ell: Option<usize>,
    pub seed: u64,
    pub cell_seed: u64,
    /// File name of the trace inside the output directory.
    pub csv: String,
    pub iterations: usize,
    pub total_flops: u64,
    pub update_flops: u64,
    pub budget_exhausted: bool,
    pub initial_f: f64,
    pub final_f: f64,
    pub initial_err: f64,
    pub final_err: f64,
    pub max_feasibility_violation: f64,
    pub lipschitz: f64,
    #[serde(skip)]
    pub trace: RunTrace,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridOutcome {
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub cells: Vec<CellOutcome>,
}

impl GridOutcome {
    pub fn cell(&self, seed: u64, method: Method, ell: Option<usize>) -> Option<&CellOutcome> {
        self.cells.iter().find(|c| c.seed == seed && c.method == method && c.ell == ell)
    }
}

struct CellPlan {
    setup: usize,
    method: Method,
    ell: Option<usize>,
}

fn csv_name(problem: &str, method: Method, ell: Option<usize>, seed: u64) -> String {
    match (method, ell) {
        (Method::Rssm, Some(ell)) => format!("{problem}_rssm_ell{ell}_seed{seed}.csv"),
        _ => format!("{problem}_rsm_seed{seed}.csv"),
    }
}

fn run_cell(config: &ExperimentConfig, setup: &SeedSetup, plan: &CellPlan) -> Result<CellOutcome> {
    let seed = cell_seed(setup.seed, plan.method, plan.ell);
    let p = setup.x0.p();
    let partition = match (plan.method, plan.ell) {
        (Method::Rssm, Some(ell)) if config.shuffle_partition => {
            Some(Partition::shuffled(p, ell, &mut Rng64::from_seed_u64(seed).split(1))?)
        }
        (Method::Rssm, Some(ell)) => Some(Partition::uniform(p, ell)?),
        _ => None,
    };
    let schedule = config.schedule.resolve(plan.method, plan.ell.unwrap_or(1), config.iters);
    let mut solver = SolverConfig::new(plan.method, schedule, partition, config.iters, seed);
    solver.stride = config.stride;
    solver.flop_budget = config.flop_budget;
    solver.clock = config.timing;
    if config.enforce_lipschitz {
        solver.step_policy = StepPolicy::Clip;
    }
    let trace = match &setup.instance {
        Instance::Rsr(inst) => run(inst, &setup.x0, &solver)?,
        Instance::Odl(inst) => run(inst, &setup.x0, &solver)?,
    };
    let problem = setup.instance.kind();
    let first = trace.records.first().expect("the initial record is always written");
    let last = trace.records.last().expect("the initial record is always written");
    log::info!(
        "{problem} {:?} ℓ={:?} seed={}: {} iterations, {} flops, err {:.3e} -> {:.3e}",
        plan.method,
        plan.ell,
        setup.seed,
        trace.iterations,
        trace.total_flops,
        first.err,
        last.err
    );
    Ok(CellOutcome {
        problem,
        method: plan.method,
        ell: plan.ell,
        seed: setup.seed,
        cell_seed: seed,
        csv: csv_name(problem, plan.method, plan.ell, setup.seed),
        iterations: trace.iterations,
        total_flops: trace.total_flops,
        update_flops: trace.update_flops,
        budget_exhausted: trace.budget_exhausted,
        initial_f: first.f,
        final_f: last.f,
        initial_err: first.err,
        final_err: last.err,
        max_feasibility_violation: trace.max_feasibility_violation,
        lipschitz: trace.lipschitz,
        trace,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| BenchError::Io { path: dir.to_path_buf(), source })
}

/// Validates `config`, runs the whole grid and, when `config.out` is set,
/// writes one CSV per cell plus the manifest.
pub fn run_grid(config: &ExperimentConfig) -> Result<GridOutcome> {
    config.validate()?;
    let loaded = match &config.instance {
        InstanceSource::Load(path) => Some(load_instance(path)?),
        InstanceSource::Generate(_) => None,
    };
    let mut setups = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let instance = match (&loaded, &config.instance) {
            (Some(inst), _) => inst.clone(),
            (None, InstanceSource::Generate(spec)) => generate(spec, seed)?,
            (None, InstanceSource::Load(_)) => unreachable!("loaded above"),
        };
        config.validate_blocks(instance_p(&instance))?;
        let x0 = initial_point(&instance, seed)?;
        setups.push(SeedSetup { seed, instance, x0 });
    }
    if let Some(path) = &config.save_instance {
        save_instance(&setups[0].instance, path)?;
    }

    let mut plans = Vec::new();
    for (i, _) in setups.iter().enumerate() {
        for &method in &config.methods {
            match method {
                Method::Rsm => plans.push(CellPlan { setup: i, method, ell: None }),
                Method::Rssm => plans.extend(config.ells.iter().map(|&ell| CellPlan { setup: i, method, ell: Some(ell) })),
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| BenchError::Config(format!("cannot start {} worker threads: {e}", config.jobs)))?;
    let cells = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| run_cell(config, &setups[plan.setup], plan))
            .collect::<Result<Vec<_>>>()
    })?;

    let outcome = GridOutcome { version: BUILD_VERSION, config: config.clone(), cells };
    if let Some(dir) = &config.out {
        write_outputs(&outcome, dir)?;
    }
    Ok(outcome)
}

fn write_outputs(outcome: &GridOutcome, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    for cell in &outcome.cells {
        emit_csv(&cell.trace.records, &dir.join(&cell.csv))?;
    }
    let path: PathBuf = dir.join(MANIFEST_NAME);
    let json = serde_json::to_string_pretty(outcome)?;
    fs::write(&path, json + "\n").map_err(|source| BenchError::Io { path, source })
}
