//! End-to-end acceptance suite. One test runs every criterion in order,
//! prints a PASS/FAIL line with the measured numbers and fails at the end
//! if any criterion failed.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use rssm_bench::{run_grid, ExperimentConfig, InstanceSource, ProblemSpec, ScheduleSpec};
use rssm_core::averaging::{
    averaged_subgradient_check, commutation_check, difference_identity_residual, spectrum_check, AveragingContext,
};
use rssm_core::blocks::{block_tangent_project, project_onto_block, rssm_block_step, sample_pair, BlockPair, Partition};
use rssm_core::diagnostics::{adaptive_prox, check_recursion_decrease, lambda_window, ProxOptions};
use rssm_core::matrix::{self, inv_sqrt, polar_project, SpdMatrix};
use rssm_core::problems::odl::gen_odl;
use rssm_core::problems::rsr::{gen_rsr, rsr_init, RsrInstance};
use rssm_core::problems::{ProblemOracle, QuadraticProblem};
use rssm_core::solvers::{run, Clock, DeltaSpec, Method, ScheduleKind, SolverConfig, StepSchedule};
use rssm_core::stiefel::{random_stiefel, retract, tangent_project};
use rssm_core::{DenseMatrix, FlopCounter, Rng64, StiefelPoint, TangentVector};

fn gaussian(r: usize, c: usize, rng: &mut Rng64) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn point(n: usize, p: usize, rng: &mut Rng64) -> StiefelPoint {
    random_stiefel(n, p, rng).unwrap()
}

fn tangent(x: &StiefelPoint, scale: f64, rng: &mut Rng64) -> TangentVector {
    let t = tangent_project(x, &gaussian(x.n(), x.p(), rng)).unwrap();
    let norm = t.norm();
    t.scaled(scale / norm)
}

fn ctx(x: &StiefelPoint, ell: usize) -> AveragingContext {
    AveragingContext::new(x.clone(), Partition::uniform(x.p(), ell).unwrap()).unwrap()
}

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: String) -> Self {
        Verdict { passed, detail }
    }
}

fn geometry() -> Verdict {
    let (mut lips, mut second, mut agree) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64);
    for (n, p) in [(4, 2), (6, 4), (8, 5), (12, 9)] {
        for seed in 0..50 {
            let mut rng = Rng64::from_seed_u64(1000 + seed);
            let x = point(n, p, &mut rng);
            let y = point(n, p, &mut rng);
            let long = tangent(&x, 3.0 * rng.random::<f64>(), &mut rng);
            let short = tangent(&x, rng.random::<f64>(), &mut rng);
            for (xi, target) in [(&long, &y), (&short, &y), (&long, &x)] {
                let r = retract(&x, xi).unwrap();
                let moved = x.matrix() + xi.matrix();
                lips = lips.max((r.matrix() - target.matrix()).norm() - (&moved - target.matrix()).norm());
            }
            for xi in [&long, &short] {
                let r = retract(&x, xi).unwrap();
                let moved = x.matrix() + xi.matrix();
                if xi.norm() <= 1.0 {
                    second = second.max((r.matrix() - &moved).norm() - xi.norm().powi(2));
                }
                let gram = DenseMatrix::identity(p, p) + xi.matrix().transpose() * xi.matrix();
                let closed = &moved * inv_sqrt(&SpdMatrix::new(gram).unwrap()).unwrap().as_matrix();
                agree = agree.max((r.matrix() - &closed).amax());
                agree = agree.max((r.matrix() - polar_project(&moved).unwrap().matrix()).amax());
            }
        }
    }
    Verdict::new(
        lips <= 1e-9 && second <= 1e-9 && agree <= 1e-10,
        format!("nonexpansive excess {lips:.2e}, second-order excess {second:.2e}, retraction agreement {agree:.2e}"),
    )
}

/// Random point of `M_{X_{−ij}}` near `center`, by retracting a random block tangent.
fn perturb_in_block(x: &StiefelPoint, pair: &BlockPair, center: &DenseMatrix, rng: &mut Rng64) -> DenseMatrix {
    let mut with_center = x.matrix().clone();
    matrix::assign_columns(&mut with_center, pair.columns(), center);
    let base = StiefelPoint::new(with_center).unwrap();
    let scale = 0.3 * rng.random::<f64>();
    let raw = gaussian(x.n(), pair.p_ij(), rng);
    let g = block_tangent_project(&base, pair, &raw, &mut FlopCounter::new()).unwrap();
    let norm = g.norm().max(1e-12);
    let moved = rssm_block_step(&base, &g, scale / norm, &mut FlopCounter::new()).unwrap();
    matrix::select_columns(moved.matrix(), pair.columns())
}

/// Uniformly spread point of `M_{X_{−ij}}`.
fn sample_block(outside: &DenseMatrix, n: usize, pij: usize, rng: &mut Rng64) -> DenseMatrix {
    let raw = gaussian(n, pij, rng);
    let reduced = &raw - outside * matrix::mul_tn(outside, &raw).unwrap();
    polar_project(&reduced).unwrap().into_matrix()
}

fn block_projection() -> Verdict {
    let mut rng = Rng64::from_seed_u64(2);
    let (mut membership, mut collapse, mut beaten, mut trials) = (0.0f64, 0.0f64, 0usize, 0usize);
    let mut worst_margin = f64::INFINITY;
    for (n, p, ell) in [(6, 4, 4), (9, 6, 3), (12, 8, 4), (10, 5, 5), (15, 9, 3)] {
        for _ in 0..2 {
            let x = point(n, p, &mut rng);
            let part = Partition::uniform(p, ell).unwrap();
            let pair = sample_pair(&part, &mut rng);
            let outside = matrix::select_columns(x.matrix(), pair.complement());
            let xij = matrix::select_columns(x.matrix(), pair.columns());
            let target = &xij + gaussian(n, pair.p_ij(), &mut rng) * 0.3;
            let proj = project_onto_block(&x, &pair, &target).unwrap();
            let orth = (proj.transpose() * &proj - DenseMatrix::identity(pair.p_ij(), pair.p_ij())).norm();
            membership = membership.max(matrix::mul_tn(&outside, &proj).unwrap().norm()).max(orth);

            let raw = gaussian(n, pair.p_ij(), &mut rng);
            let reduced = &raw - &outside * matrix::mul_tn(&outside, &raw).unwrap();
            let direct = project_onto_block(&x, &pair, &reduced).unwrap();
            collapse = collapse.max((direct - polar_project(&reduced).unwrap().matrix()).amax());

            let best = (&proj - &target).norm();
            for k in 0..1000 {
                let candidate = if k % 2 == 0 {
                    perturb_in_block(&x, &pair, &proj, &mut rng)
                } else {
                    sample_block(&outside, n, pair.p_ij(), &mut rng)
                };
                let margin = (&candidate - &target).norm() - best;
                worst_margin = worst_margin.min(margin);
                if margin < -1e-12 {
                    beaten += 1;
                }
                trials += 1;
            }
        }
    }
    Verdict::new(
        membership <= 1e-10 && collapse <= 1e-12 && beaten == 0,
        format!(
            "membership {membership:.2e}, orthogonal case {collapse:.2e}, {beaten} of {trials} candidates closer (min margin {worst_margin:.2e})"
        ),
    )
}

fn spectrum() -> Verdict {
    let mut rng = Rng64::from_seed_u64(3);
    let mut passed = true;
    let mut parts = Vec::new();
    for (n, p, ell) in [(5, 3, 3), (6, 4, 2), (8, 6, 3)] {
        let x = point(n, p, &mut rng);
        let report = spectrum_check(&ctx(&x, ell)).unwrap();
        passed &= report.passed;
        let found: Vec<String> = report.measured.iter().map(|(v, m)| format!("{v:.6}x{m}")).collect();
        parts.push(format!("({n},{p},{ell}) [{}] err {:.1e}", found.join(" "), report.max_eigenvalue_error));
    }
    Verdict::new(passed, parts.join("; "))
}

fn commutation() -> Verdict {
    let mut rng = Rng64::from_seed_u64(4);
    let (mut three_way, mut difference) = (0.0f64, 0.0f64);
    for k in 0..50 {
        let (n, p, ell) = [(8, 6, 3), (9, 6, 2), (10, 8, 4), (7, 5, 5)][k % 4];
        let x = point(n, p, &mut rng);
        let report = commutation_check(&ctx(&x, ell), &gaussian(n, p, &mut rng)).unwrap();
        three_way = three_way.max(report.max_discrepancy);

        let y = point(n, p, &mut rng);
        let part = Partition::uniform(p, ell).unwrap();
        let r = difference_identity_residual(&part, &x, &y, &gaussian(n, p, &mut rng)).unwrap();
        difference = difference.max(r);
    }
    Verdict::new(
        three_way <= 1e-10 && difference <= 1e-10,
        format!("commutation {three_way:.2e}, difference identity {difference:.2e}"),
    )
}

fn averaged_subgradients() -> Verdict {
    let mut rng = Rng64::from_seed_u64(5);
    let rsr = gen_rsr(8, 2, 20, 30, &mut rng).unwrap();
    let odl = gen_odl(8, 60, 0.3, &mut rng).unwrap().with_columns(6).unwrap();
    let mut flops = FlopCounter::new();
    let (mut rsr_worst, mut odl_worst) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = point(8, 6, &mut rng);
        let c = ctx(&x, 3);
        let eta = gaussian(8, 6, &mut rng);
        let r = averaged_subgradient_check(&c, &rsr.subgradient(&x, &mut flops).unwrap(), &eta).unwrap();
        rsr_worst = rsr_worst.max(r.inner_residual).max(r.norm_residual);
        let r = averaged_subgradient_check(&c, &odl.subgradient(&x, &mut flops).unwrap(), &eta).unwrap();
        odl_worst = odl_worst.max(r.inner_residual).max(r.norm_residual);
    }
    Verdict::new(
        rsr_worst <= 1e-9 && odl_worst <= 1e-9,
        format!("rsr residual {rsr_worst:.2e}, odl residual {odl_worst:.2e}"),
    )
}

fn paper_schedule(c: f64, a: f64, rho: f64, ell: usize) -> StepSchedule {
    StepSchedule {
        kind: ScheduleKind::LogDamped,
        delta: DeltaSpec::Geometric { c, a, rho, base: (ell * (ell - 1)) as f64 / 2.0 },
        horizon: None,
        ell,
    }
}

fn feasibility_and_flops() -> Verdict {
    let mut rng = Rng64::from_seed_u64(6);
    let rsr = gen_rsr(60, 10, 300, 700, &mut rng).unwrap();
    let odl = gen_odl(30, 1643, 0.3, &mut rng).unwrap();
    let iters = 10_000;

    let mut cfg = SolverConfig::new(Method::Rssm, paper_schedule(0.9, 2.0, 0.991, 5), Some(Partition::uniform(50, 5).unwrap()), iters, 61);
    cfg.drift_check_every = 1;
    cfg.stride = 1000;
    cfg.clock = Clock::Off;
    let rsr_trace = run(&rsr, &rsr_init(&rsr).unwrap(), &cfg);

    let mut cfg = SolverConfig::new(Method::Rssm, paper_schedule(1e-3, 4.0, 0.995, 5), Some(Partition::uniform(30, 5).unwrap()), iters, 62);
    cfg.drift_check_every = 1;
    cfg.stride = 1000;
    cfg.clock = Clock::Off;
    let odl_trace = run(&odl, &point(30, 30, &mut rng), &cfg);

    let (rsr_viol, odl_viol) = match (&rsr_trace, &odl_trace) {
        (Ok(a), Ok(b)) => (a.max_feasibility_violation, b.max_feasibility_violation),
        (a, b) => {
            return Verdict::new(false, format!("run failed: rsr {:?}, odl {:?}", a.as_ref().err(), b.as_ref().err()));
        }
    };
    let feasible = rsr_trace.as_ref().unwrap().iterations == iters
        && odl_trace.as_ref().unwrap().iterations == iters
        && rsr_viol <= 1e-8
        && odl_viol <= 1e-8;

    let per_iter = |ell: usize| -> f64 {
        let mut cfg = SolverConfig::new(Method::Rssm, paper_schedule(0.9, 2.0, 0.991, ell), Some(Partition::uniform(50, ell).unwrap()), 200, 63);
        cfg.clock = Clock::Off;
        let t = run(&rsr, &rsr_init(&rsr).unwrap(), &cfg).unwrap();
        t.update_flops as f64 / t.iterations as f64
    };
    let ratios: Vec<(usize, f64)> = [5, 10].iter().map(|&l| (l, per_iter(2 * l) / per_iter(l))).collect();
    let scaling = ratios.iter().all(|&(_, r)| (0.375..=0.625).contains(&r));
    let shown: Vec<String> = ratios.iter().map(|(l, r)| format!("ell {l}->{}: {r:.3}", 2 * l)).collect();
    Verdict::new(
        feasible && scaling,
        format!("max violation rsr {rsr_viol:.2e}, odl {odl_viol:.2e}; update-flop ratio {}", shown.join(", ")),
    )
}

fn paper_grid(spec: ProblemSpec, c: f64, a: f64, rho: f64) -> ExperimentConfig {
    ExperimentConfig {
        instance: InstanceSource::Generate(spec),
        ells: vec![3, 5, 10],
        methods: vec![Method::Rssm, Method::Rsm],
        schedule: ScheduleSpec { kind: ScheduleKind::LogDamped, c, a: Some(a), rho: Some(rho), delta: None, horizon: None },
        iters: 1_000_000,
        seeds: vec![1, 2, 3],
        stride: 500,
        enforce_lipschitz: false,
        shuffle_partition: false,
        flop_budget: Some(100_000_000_000),
        timing: Clock::Off,
        jobs: 1,
        out: None,
        save_instance: None,
    }
}

fn experiments() -> Verdict {
    let rsr = paper_grid(ProblemSpec::Rsr { n: 100, d: 10, m1: 1500, m2: 3500 }, 0.9, 2.0, 0.991);
    let odl = paper_grid(ProblemSpec::Odl { n: 60, m: 4648, theta: 0.3 }, 1e-3, 4.0, 0.995);
    let mut passed = true;
    let mut lines = Vec::new();
    for cfg in [rsr, odl] {
        let outcome = match run_grid(&cfg) {
            Ok(o) => o,
            Err(e) => return Verdict::new(false, format!("grid failed: {e}")),
        };
        for &seed in &cfg.seeds {
            let rsm = outcome.cell(seed, Method::Rsm, None).unwrap();
            let mut wins = 0;
            let mut errs = Vec::new();
            for &ell in &cfg.ells {
                let cell = outcome.cell(seed, Method::Rssm, Some(ell)).unwrap();
                if cell.final_err < rsm.final_err {
                    wins += 1;
                }
                errs.push(format!("l{ell} {:.1e}", cell.final_err));
            }
            passed &= wins >= 2;
            let mut drop = String::new();
            if rsm.problem == "rsr" {
                let dropped = |c: &rssm_bench::CellOutcome| c.final_err <= c.initial_err / 10.0;
                let rssm_drops = cfg
                    .ells
                    .iter()
                    .filter(|&&ell| dropped(outcome.cell(seed, Method::Rssm, Some(ell)).unwrap()))
                    .count();
                let ok = dropped(rsm) && rssm_drops >= 2;
                passed &= ok;
                drop = format!(", 10x drop rssm {rssm_drops}/3 rsm {}", dropped(rsm));
            }
            lines.push(format!(
                "{} seed {seed}: init {:.2e}, rssm [{}], rsm {:.1e}, wins {wins}/3{drop}",
                rsm.problem,
                rsm.initial_err,
                errs.join(" "),
                rsm.final_err
            ));
        }
    }
    Verdict::new(passed, lines.join("; "))
}

/// RSR on `St(5,2)` whose data all lie in a 3-dimensional subspace.
fn outlier_free_rsr(rng: &mut Rng64) -> RsrInstance {
    let basis = point(5, 3, rng);
    let mut data = basis.matrix() * gaussian(3, 12, rng);
    for mut c in data.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    RsrInstance::new(data, basis, vec![true; 12]).unwrap()
}

fn diagnostics() -> Verdict {
    let mut rng = Rng64::from_seed_u64(8);
    let opts = ProxOptions::default();
    let rsr = outlier_free_rsr(&mut rng);
    let x = rsr.complement_basis().unwrap();
    let lambda = 0.5 * lambda_window(2, rsr.lipschitz(), rsr.weak_convexity());
    let theta_rsr = adaptive_prox(&rsr, &ctx(&x, 2), lambda, &opts).unwrap().theta;

    let quad = QuadraticProblem { target: gaussian(5, 2, &mut rng) };
    let x = polar_project(&quad.target).unwrap();
    let lambda = 0.5 * lambda_window(2, quad.lipschitz(), quad.weak_convexity());
    let theta_quad = adaptive_prox(&quad, &ctx(&x, 2), lambda, &opts).unwrap().theta;

    let rsr = gen_rsr(5, 3, 10, 15, &mut rng).unwrap();
    let lambda = 0.5 * lambda_window(2, rsr.lipschitz(), rsr.weak_convexity());
    let gamma = 0.1 / rsr.lipschitz();
    let (mut holds, mut min_slack) = (0, f64::INFINITY);
    for _ in 0..10 {
        let x = point(5, 2, &mut rng);
        let report = check_recursion_decrease(&rsr, &ctx(&x, 2), lambda, gamma, &opts).unwrap();
        holds += usize::from(report.holds);
        min_slack = min_slack.min(report.slack);
    }
    Verdict::new(
        theta_rsr <= 1e-4 && theta_quad <= 1e-4 && holds == 10,
        format!("theta rsr {theta_rsr:.2e}, quadratic {theta_quad:.2e}; decrease holds {holds}/10, min slack {min_slack:.3e}"),
    )
}

fn small_grid(dir: &Path, jobs: usize) -> ExperimentConfig {
    ExperimentConfig {
        instance: InstanceSource::Generate(ProblemSpec::Rsr { n: 20, d: 4, m1: 60, m2: 140 }),
        ells: vec![2, 4],
        methods: vec![Method::Rssm, Method::Rsm],
        schedule: ScheduleSpec { kind: ScheduleKind::LogDamped, c: 0.9, a: Some(2.0), rho: Some(0.991), delta: None, horizon: None },
        iters: 500,
        seeds: vec![7, 8],
        stride: 10,
        enforce_lipschitz: false,
        shuffle_partition: true,
        flop_budget: None,
        timing: Clock::Off,
        jobs,
        out: Some(dir.to_path_buf()),
        save_instance: None,
    }
}

fn determinism() -> Verdict {
    let root = tempfile::tempdir().unwrap();
    let (a, b) = (root.path().join("a"), root.path().join("b"));
    let first = run_grid(&small_grid(&a, 1)).unwrap();
    run_grid(&small_grid(&b, 2)).unwrap();
    let mut identical = 0;
    for cell in &first.cells {
        let left = fs::read(a.join(&cell.csv)).unwrap();
        let right = fs::read(b.join(&cell.csv)).unwrap();
        identical += usize::from(!left.is_empty() && left == right);
    }
    Verdict::new(
        identical == first.cells.len(),
        format!("{identical} of {} traces byte-identical", first.cells.len()),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict, Duration); 9] = [
        ("geometry exactness", geometry, Duration::from_secs(10)),
        ("block projection", block_projection, Duration::from_secs(30)),
        ("averaging spectrum", spectrum, Duration::from_secs(20)),
        ("commutation and difference identity", commutation, Duration::from_secs(60)),
        ("averaged subgradients", averaged_subgradients, Duration::from_secs(60)),
        ("feasibility and flop scaling", feasibility_and_flops, Duration::from_secs(300)),
        ("experiment reproduction", experiments, Duration::from_secs(900)),
        ("diagnostics", diagnostics, Duration::from_secs(300)),
        ("determinism", determinism, Duration::from_secs(120)),
    ];
    let mut failed = Vec::new();
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = check();
        let elapsed = start.elapsed();
        let on_time = elapsed <= *limit;
        let passed = verdict.passed && on_time;
        println!(
            "criterion {} ({name}): {} | {} | {:.1}s of {}s",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            verdict.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
        if !passed {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
