use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use rssm_bench::{run_grid, run_selftest, BenchError, ExperimentConfig, InstanceSource, ProblemSpec, ScheduleSpec};
use rssm_core::solvers::{Clock, Method, ScheduleKind};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProblemArg {
    Rsr,
    Odl,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Rssm,
    Rsm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleArg {
    /// Δ/√(ℓ(T+1)) for a fixed horizon T
    Const,
    /// Δ_k/√(ℓ(k+1))
    Dimin,
    /// Δ_k/(√(k+2)·ln(k+2))
    Logdamped,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TimingArg {
    Wall,
    Off,
}

/// Run RSSM and RSM on robust subspace recovery or orthogonal dictionary learning.
#[derive(Debug, Parser)]
#[command(name = "bench", version = env!("RSSM_BUILD_VERSION"))]
struct Args {
    #[arg(long, value_enum, required_unless_present_any = ["load_instance", "selftest"])]
    problem: Option<ProblemArg>,
    #[arg(long)]
    n: Option<usize>,
    /// Inlier subspace dimension (rsr)
    #[arg(long)]
    d: Option<usize>,
    /// Number of inliers (rsr)
    #[arg(long)]
    m1: Option<usize>,
    /// Number of outliers (rsr)
    #[arg(long)]
    m2: Option<usize>,
    /// Number of samples (odl)
    #[arg(long)]
    m: Option<usize>,
    /// Sparsity level of the codes (odl)
    #[arg(long, default_value_t = 0.3)]
    theta: f64,
    /// Block counts for RSSM; repeatable or comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [3])]
    ell: Vec<usize>,
    /// Repeatable
    #[arg(long, value_enum, default_values_t = [MethodArg::Rssm])]
    method: Vec<MethodArg>,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Logdamped)]
    schedule: ScheduleArg,
    /// Step scale; RSM uses the constant Δ = c
    #[arg(long, default_value_t = 0.9)]
    c: f64,
    /// RSSM scale exponent: Δ_k = c·C(ℓ,2)^{a·ρ^k − 1}
    #[arg(long, requires = "rho")]
    a: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Constant Δ for every method
    #[arg(long, conflicts_with_all = ["a", "rho"])]
    delta: Option<f64>,
    /// Horizon T of the constant schedule (default: iters − 1)
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Master seeds; repeatable or comma separated
    #[arg(long, value_delimiter = ',', default_values_t = [0])]
    seed: Vec<u64>,
    /// Telemetry stride
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Clip steps to 0.999/L
    #[arg(long)]
    enforce_lipschitz: bool,
    /// Randomly permute columns before splitting them into blocks
    #[arg(long)]
    shuffle_partition: bool,
    /// Stop each run once its flop count reaches this value
    #[arg(long)]
    flop_budget: Option<u64>,
    /// `off` writes zero seconds so that traces are byte-reproducible
    #[arg(long, value_enum, default_value_t = TimingArg::Wall)]
    timing: TimingArg,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long, default_value = "bench-out")]
    out: PathBuf,
    #[arg(long)]
    save_instance: Option<PathBuf>,
    #[arg(long, conflicts_with = "save_instance")]
    load_instance: Option<PathBuf>,
    /// Run the size-guarded diagnostic suite and exit
    #[arg(long)]
    selftest: bool,
}

fn required(value: Option<usize>, flag: &str, problem: &str) -> Result<usize, BenchError> {
    value.ok_or_else(|| BenchError::Config(format!("--{flag} is required for --problem {problem}")))
}

fn experiment(args: Args) -> Result<ExperimentConfig, BenchError> {
    let instance = match (&args.load_instance, args.problem) {
        (Some(path), _) => InstanceSource::Load(path.clone()),
        (None, Some(ProblemArg::Rsr)) => InstanceSource::Generate(ProblemSpec::Rsr {
            n: required(args.n, "n", "rsr")?,
            d: required(args.d, "d", "rsr")?,
            m1: required(args.m1, "m1", "rsr")?,
            m2: required(args.m2, "m2", "rsr")?,
        }),
        (None, Some(ProblemArg::Odl)) => InstanceSource::Generate(ProblemSpec::Odl {
            n: required(args.n, "n", "odl")?,
            m: required(args.m, "m", "odl")?,
            theta: args.theta,
        }),
        (None, None) => return Err(BenchError::Config("--problem or --load-instance is required".into())),
    };
    let mut methods: Vec<Method> = args
        .method
        .iter()
        .map(|m| match m {
            MethodArg::Rssm => Method::Rssm,
            MethodArg::Rsm => Method::Rsm,
        })
        .collect();
    methods.dedup();
    let kind = match args.schedule {
        ScheduleArg::Const => ScheduleKind::ConstantHorizon,
        ScheduleArg::Dimin => ScheduleKind::Diminishing,
        ScheduleArg::Logdamped => ScheduleKind::LogDamped,
    };
    Ok(ExperimentConfig {
        instance,
        ells: args.ell,
        methods,
        schedule: ScheduleSpec { kind, c: args.c, a: args.a, rho: args.rho, delta: args.delta, horizon: args.horizon },
        iters: args.iters,
        seeds: args.seed,
        stride: args.stride,
        enforce_lipschitz: args.enforce_lipschitz,
        shuffle_partition: args.shuffle_partition,
        flop_budget: args.flop_budget,
        timing: match args.timing {
            TimingArg::Wall => Clock::Wall,
            TimingArg::Off => Clock::Off,
        },
        jobs: args.jobs,
        out: Some(args.out),
        save_instance: args.save_instance,
    })
}

fn selftest() -> ExitCode {
    match run_selftest(0) {
        Ok(checks) => {
            for check in &checks {
                println!("{}", serde_json::to_string(check).expect("reports serialize"));
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            eprintln!("selftest: {} checks, {failed} failed", checks.len());
            if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &BenchError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RSSM_LOG", "error")).init();
    let args = Args::parse();
    if args.selftest {
        return selftest();
    }
    let outcome = match experiment(args).and_then(|config| run_grid(&config)) {
        Ok(outcome) => outcome,
        Err(e) => return fail(&e),
    };
    for cell in &outcome.cells {
        let ell = cell.ell.map_or_else(|| "-".to_string(), |l| l.to_string());
        println!(
            "{} {:?} ℓ={ell} seed={} iters={} flops={} f={:.6e} err {:.3e} -> {:.3e}",
            cell.problem,
            cell.method,
            cell.seed,
            cell.iterations,
            cell.total_flops,
            cell.final_f,
            cell.initial_err,
            cell.final_err
        );
    }
    if let Some(dir) = &outcome.config.out {
        println!("wrote {} traces and the manifest to {}", outcome.cells.len(), dir.display());
    }
    ExitCode::SUCCESS
}
