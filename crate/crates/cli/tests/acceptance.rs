//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any fails.

use std::path::Path as FsPath;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use selfdual::pathspace::NonlinearOp;
use selfdual::problems::{preset, solve_problem, BoundarySpec, Check, Problem, SchrodingerOp, VecSpec};
use selfdual::solver::{SolveOptions, SolveReport};
use selfdual::verify::{self, PropertyResult};
use selfdual::{Grid, GridBc};

const SEED: u64 = 42;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome { passed, detail: detail.into() }
    }
}

type Criterion = fn() -> Result<Outcome, String>;

fn main() {
    let criteria: [(&str, Duration, Criterion); 9] = [
        ("duality suite", Duration::from_secs(10), duality),
        ("antiselfdual suite", Duration::from_secs(60), antiselfdual),
        ("regularization suite", Duration::from_secs(5), regularization),
        ("gradient suite", Duration::from_secs(30), gradient),
        ("parabolic oracle equivalence", Duration::from_secs(60), parabolic),
        ("boundary conditions", Duration::from_secs(60), boundaries),
        ("hamiltonian suite", Duration::from_secs(120), hamiltonian),
        ("nonlinear suite", Duration::from_secs(180), nonlinear),
        ("determinism", Duration::from_secs(600), determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let passed = outcome.passed && in_time;
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {}: {} {name}: {}; {:.1} s of {} s{}",
            i + 1,
            if passed { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { " (over budget)" }
        );
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn find<'a>(props: &'a [PropertyResult], name: &str) -> Result<&'a PropertyResult, String> {
    props.iter().find(|p| p.name == name).ok_or_else(|| format!("missing property {name}"))
}

fn suite_outcome(props: &[PropertyResult]) -> Outcome {
    let failures: Vec<&str> = props.iter().filter(|p| !p.passed).map(|p| p.name.as_str()).collect();
    if failures.is_empty() {
        Outcome::new(true, format!("{} properties", props.len()))
    } else {
        Outcome::new(false, format!("failed {}", failures.join(", ")))
    }
}

fn duality() -> Result<Outcome, String> {
    let props = verify::duality(SEED, None).map_err(err)?;
    let fy = find(&props, "duality.fenchel_young")?;
    let bi = find(&props, "duality.biconjugate")?;
    let passed = fy.measured >= -1e-9 && fy.samples >= 10_000 && bi.measured <= 1e-6 && bi.samples >= 10_000;
    let all = suite_outcome(&props);
    Ok(Outcome::new(
        passed && all.passed,
        format!(
            "min Fenchel-Young gap {:.2e} over {} samples, biconjugate deviation {:.2e} over {} samples, {}",
            fy.measured, fy.samples, bi.measured, bi.samples, all.detail
        ),
    ))
}

fn antiselfdual() -> Result<Outcome, String> {
    let props = verify::lagrangian(SEED).map_err(err)?;
    let asd = props
        .iter()
        .filter(|p| p.name.starts_with("lagrangian.asd."))
        .map(|p| p.measured)
        .fold(0.0, f64::max);
    let gap = props
        .iter()
        .filter(|p| p.name.starts_with("lagrangian.gap."))
        .map(|p| p.measured)
        .fold(f64::INFINITY, f64::min);
    let samples: usize = props.iter().filter(|p| p.name.starts_with("lagrangian.gap.")).map(|p| p.samples).min().unwrap_or(0);
    let all = suite_outcome(&props);
    Ok(Outcome::new(
        all.passed && asd <= 1e-5 && gap >= -1e-9 && samples >= 10_000,
        format!("max grid deviation {asd:.2e}, min gap {gap:.2e} (at least {samples} samples each), {}", all.detail),
    ))
}

fn regularization() -> Result<Outcome, String> {
    let props = verify::regularization(SEED).map_err(err)?;
    let closed = find(&props, "regularization.closed_form")?;
    let all = suite_outcome(&props);
    Ok(Outcome::new(
        all.passed && closed.measured <= 1e-8,
        format!("closed form deviation {:.2e}, {}", closed.measured, all.detail),
    ))
}

fn gradient() -> Result<Outcome, String> {
    let props = verify::gradient(SEED).map_err(err)?;
    let worst = props
        .iter()
        .filter(|p| p.name.starts_with("gradient."))
        .map(|p| p.measured)
        .fold(0.0, f64::max);
    let kinds = props.iter().filter(|p| p.name.starts_with("gradient.")).count();
    let all = suite_outcome(&props);
    Ok(Outcome::new(
        all.passed && worst <= 1e-5,
        format!("max relative error {worst:.2e} over {kinds} functional kinds, {}", all.detail),
    ))
}

fn gl_skew(intervals: usize) -> Result<SolveReport, String> {
    let mut spec = preset("gl_skew").map_err(err)?;
    spec.grid.n = 16;
    spec.intervals = intervals;
    spec.horizon = 1.0;
    if !spec.checks.contains(&Check::Oracle) {
        spec.checks.push(Check::Oracle);
    }
    Ok(solve_problem(&spec, &SolveOptions::default()).map_err(err)?.report)
}

fn parabolic() -> Result<Outcome, String> {
    let fine = gl_skew(64)?;
    let coarse = gl_skew(32)?;
    let fine_err = fine.oracle_error.ok_or("no oracle")?;
    let coarse_err = coarse.oracle_error.ok_or("no oracle")?;
    let ratio = coarse_err / fine_err;
    Ok(Outcome::new(
        fine.certified && fine_err <= 1e-3 && (3.0..=5.0).contains(&ratio),
        format!(
            "value {:.2e} at scale {:.2e}, oracle error {fine_err:.2e}, N=32/N=64 ratio {ratio:.2}",
            fine.attained_value, fine.scale
        ),
    ))
}

/// Start-node distance to the fixed-point oracle, plus the solve report.
fn fixed_point_match(name: &str, boundary: BoundarySpec) -> Result<(SolveReport, f64), String> {
    let mut spec = preset(name).map_err(err)?;
    spec.boundary = boundary;
    let problem = Problem::build(&spec, None).map_err(err)?;
    let solution = problem.solve(&SolveOptions::default()).map_err(err)?;
    let reference = problem.reference().map_err(err)?.ok_or("no oracle")?;
    let gap = (solution.trajectory.start() - reference.start()).amax();
    Ok((solution.report, gap))
}

fn boundaries() -> Result<Outcome, String> {
    let mut spec = preset("gl_skew").map_err(err)?;
    let dim = 2 * spec.grid.n;
    let start: Vec<f64> = (0..dim).map(|i| 0.5 * ((i as f64) * 0.7).sin()).collect();
    spec.boundary = BoundarySpec::Initial { value: VecSpec::Values { values: start.clone() } };
    let initial = solve_problem(&spec, &SolveOptions::default()).map_err(err)?;
    let initial_err = (initial.trajectory.start() - DVector::from_vec(start)).norm();

    let (periodic, periodic_gap) = fixed_point_match("gl_skew", BoundarySpec::Periodic)?;
    let (anti, anti_gap) = fixed_point_match("gl_skew", BoundarySpec::Antiperiodic)?;
    let passed = initial.report.certified
        && initial_err <= 1e-8
        && periodic.certified
        && periodic.boundary_residual <= 1e-6
        && periodic_gap <= 1e-4
        && anti.certified
        && anti.boundary_residual <= 1e-6
        && anti_gap <= 1e-4;
    Ok(Outcome::new(
        passed,
        format!(
            "initial {initial_err:.2e}; periodic residual {:.2e}, fixed point {periodic_gap:.2e}; \
             antiperiodic residual {:.2e}, fixed point {anti_gap:.2e}",
            periodic.boundary_residual, anti.boundary_residual
        ),
    ))
}

fn hamiltonian() -> Result<Outcome, String> {
    let mut spec = preset("ham_bilaplacian").map_err(err)?;
    spec.grid = Grid { n: 4, length: 5.0, bc: GridBc::Dirichlet };
    if let selfdual::problems::Formulation::Hamiltonian { phi, .. } = &mut spec.formulation {
        *phi = selfdual::problems::PhiSpec::Quadratic {
            coeff: 1.0,
            tilt: Some(VecSpec::Stack {
                parts: vec![
                    VecSpec::Sine { amplitude: 0.5, frequency: 1.0 },
                    VecSpec::Gaussian { amplitude: 0.5, center: 2.5, width: 1.0 },
                ],
            }),
        };
    }
    let opts = SolveOptions { value_tolerance: 1e-5, ..Default::default() };
    let problem = Problem::build(&spec, None).map_err(err)?;
    let window = problem.functional.info().window.ok_or("no window")?;
    let periodic = problem.solve(&opts).map_err(err)?.report;
    let oracle = periodic.oracle_error.ok_or("no oracle")?;

    spec.boundary = BoundarySpec::Mixed {
        start: VecSpec::Cosine { amplitude: 0.3, frequency: 1.0 },
        end: VecSpec::Constant { value: -0.2 },
    };
    let mixed = solve_problem(&spec, &opts).map_err(err)?.report;
    let passed = window.horizon_ok
        && periodic.certified
        && oracle <= 1e-3
        && mixed.certified
        && mixed.boundary_residual <= 1e-6
        && mixed.oracle_error.is_none_or(|e| e <= 1e-3);
    Ok(Outcome::new(
        passed,
        format!(
            "embedding constant {:.3}, T bound {:.3e}; value {:.2e} at scale {:.2e}, oracle {oracle:.2e}; \
             mixed endpoint residual {:.2e}{}",
            window.embedding_constant,
            window.horizon_bound,
            periodic.attained_value,
            periodic.scale,
            mixed.boundary_residual,
            mixed.oracle_error.map(|e| format!(", oracle {e:.2e}")).unwrap_or_default()
        ),
    ))
}

fn nonlinear() -> Result<Outcome, String> {
    let spec = preset("nls_cubic").map_err(err)?;
    let grid = Grid::new(spec.grid.n, spec.grid.length, spec.grid.bc).map_err(err)?;
    let op = SchrodingerOp::new(&grid.laplacian(), 3.0, 1.0).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut pairing: f64 = 0.0;
    for _ in 0..100 {
        let x = DVector::from_fn(2 * spec.grid.n, |_, _| rng.gen_range(-1.0..1.0));
        let t = rng.gen_range(0.0..spec.horizon);
        pairing = pairing.max(op.apply(t, &x).dot(&x).abs());
    }
    let report = solve_problem(&spec, &SolveOptions::default()).map_err(err)?.report;
    let oracle = report.oracle_error.ok_or("no oracle")?;
    Ok(Outcome::new(
        pairing <= 1e-10 && report.certified && oracle <= 1e-3,
        format!(
            "max pairing {pairing:.2e} on 100 states; value {:.2e} at scale {:.2e}, RK4 error {oracle:.2e}",
            report.attained_value, report.scale
        ),
    ))
}

fn report_without_time(path: &FsPath) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(err)?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(err)?;
    value.as_object_mut().ok_or("report is not an object")?.remove("wall_time");
    Ok(value)
}

fn cli(args: &[&str]) -> Result<i32, String> {
    let status = Command::new(env!("CARGO_BIN_EXE_selfdual"))
        .args(args)
        .env_remove("SDE_SEED")
        .output()
        .map_err(err)?
        .status;
    status.code().ok_or_else(|| "terminated by signal".to_string())
}

fn determinism() -> Result<Outcome, String> {
    let dir = tempfile::tempdir().map_err(err)?;
    let mut reports = Vec::new();
    for (label, args) in [
        ("verify", vec!["verify", "all", "--seed", "42", "--quiet"]),
        ("run", vec!["run", "--preset", "gl_skew", "--n", "16", "--N", "64", "--T", "1.0", "--quiet"]),
    ] {
        let mut pair = Vec::new();
        for k in 0..2 {
            let out = dir.path().join(format!("{label}_{k}.json"));
            let mut full = args.clone();
            let out_str = out.to_str().ok_or("temp path")?.to_string();
            full.extend(["--out", out_str.as_str()]);
            let code = cli(&full)?;
            if code != 0 {
                return Ok(Outcome::new(false, format!("{label} exited with {code}")));
            }
            pair.push(report_without_time(&out)?);
        }
        reports.push((label, pair[0] == pair[1]));
    }
    let detail = reports
        .iter()
        .map(|(l, same)| format!("{l} reports {}", if *same { "identical" } else { "differ" }))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome::new(reports.iter().all(|(_, same)| *same), detail))
}
