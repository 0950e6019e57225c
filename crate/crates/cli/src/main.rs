mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use selfdual::problems::{preset, Check, Problem, ProblemPreset, PRESET_NAMES};
use selfdual::solver::SolveOptions;
use selfdual::verify::{self, Fault, Suite};

use config::{parse_boundary, RunConfig};
use output::{failed_checks, read_trajectory, write_json, write_trajectory, RunReport};

/// Largest accepted difference between a re-evaluated dump and the reported value.
const ROUNDTRIP_TOLERANCE: f64 = 1e-12;

#[derive(Parser)]
#[command(name = "selfdual", version, about = "Selfdual variational solver for evolution equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a preset or a configured problem.
    Run(Box<RunArgs>),
    /// Run the property suites.
    Verify(VerifyArgs),
    /// Re-evaluate the functional on a trajectory dump.
    Evaluate(EvaluateArgs),
    /// List presets, or print one as JSON.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Grid size.
    #[arg(long = "n")]
    grid: Option<usize>,
    /// Number of time intervals.
    #[arg(long = "N")]
    intervals: Option<usize>,
    /// Horizon.
    #[arg(long = "T")]
    horizon: Option<f64>,
    /// `periodic`, `antiperiodic` or a JSON boundary object.
    #[arg(long)]
    boundary: Option<String>,
    #[arg(long)]
    omega: Option<f64>,
    /// Coercive perturbation eps/2 |v|^2.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long, env = "SDE_SEED")]
    seed: Option<u64>,
    /// Extra residual to report; repeatable.
    #[arg(long, value_enum)]
    check: Vec<CheckArg>,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV trajectory path.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Suppress the summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckArg {
    Boundary,
    Mild,
    Oracle,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_enum)]
    suite: SuiteArg,
    #[arg(long, env = "SDE_SEED", default_value_t = 42)]
    seed: u64,
    /// Deliberately break a property to check that the suite catches it.
    #[arg(long, value_enum)]
    inject_fault: Option<FaultArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print only failures and the verdict.
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Duality,
    Lagrangian,
    Gradient,
    Oracle,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    Sign,
}

#[derive(Args)]
struct EvaluateArgs {
    /// JSON report written by `run --out`.
    #[arg(long)]
    report: PathBuf,
    /// CSV dump written by `run --trajectory`.
    #[arg(long)]
    trajectory: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => run(*args),
        Command::Verify(args) => verify_cmd(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Presets { name } => presets(name),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(name) = &args.preset {
        cfg.preset = Some(name.clone());
        cfg.problem = None;
    }
    cfg.n = args.grid.or(cfg.n);
    cfg.intervals = args.intervals.or(cfg.intervals);
    cfg.horizon = args.horizon.or(cfg.horizon);
    if let Some(b) = &args.boundary {
        cfg.boundary = Some(parse_boundary(b)?);
    }
    cfg.omega = args.omega.or(cfg.omega);
    cfg.seed = args.seed.or(cfg.seed);
    if let Some(eps) = args.epsilon {
        cfg.solver.epsilon_coercify = Some(eps);
    }
    if let Some(r) = args.restarts {
        cfg.solver.restarts = r;
    }
    if let Some(m) = args.max_iterations {
        cfg.solver.max_iterations = m;
    }
    cfg.checks.extend(args.check.iter().map(|c| match c {
        CheckArg::Boundary => Check::Boundary,
        CheckArg::Mild => Check::Mild,
        CheckArg::Oracle => Check::Oracle,
    }));
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if args.trajectory.is_some() {
        cfg.trajectory = args.trajectory.clone();
    }
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<bool> {
    let cfg = run_config(&args)?;
    let (spec, opts) = cfg.resolve()?;
    let problem = Problem::build(&spec, opts.epsilon_coercify)?;
    let solution = problem.solve(&opts)?;
    let report = &solution.report;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let failed = failed_checks(report, &cfg.thresholds);
    let passed = failed.is_empty();
    let summary = RunReport {
        schema: 1,
        preset: &spec.name,
        functional: problem.functional.info(),
        dim: problem.dim(),
        intervals: spec.intervals,
        horizon: spec.horizon,
        seed: opts.seed,
        thresholds: &cfg.thresholds,
        problem: &spec,
        solver: &opts,
        passed,
        failed_checks: failed,
        solve: report,
    };
    if let Some(path) = &cfg.out {
        write_json(path, &summary)?;
    }
    if let Some(path) = &cfg.trajectory {
        write_trajectory(path, problem.discretization(), &solution.trajectory)?;
    }
    if !args.quiet {
        print_run(&summary);
    }
    Ok(passed)
}

fn print_run(r: &RunReport) {
    println!("preset        {} ({})", r.preset, r.functional.kind);
    println!("size          dim {}, N {}, T {}", r.dim, r.intervals, r.horizon);
    println!(
        "value         {:.3e} (scale {:.3e}, certified {})",
        r.solve.attained_value, r.solve.scale, r.solve.certified
    );
    println!(
        "solver        {} iterations, {} evaluations, {:?}, restart {}/{}",
        r.solve.iterations, r.solve.evaluations, r.solve.termination, r.solve.best_restart, r.solve.restarts_run
    );
    println!("boundary      {:.3e}", r.solve.boundary_residual);
    if let Some(m) = r.solve.mild_residual {
        println!("mild          {m:.3e}");
    }
    if let Some(o) = r.solve.oracle_error {
        println!("oracle        {o:.3e}");
    }
    println!("wall time     {:.2} s", r.solve.wall_time);
    if r.passed {
        println!("PASS");
    } else {
        println!("FAIL: {}", r.failed_checks.join(", "));
    }
}

fn verify_cmd(args: VerifyArgs) -> Result<bool> {
    let suite = match args.suite {
        SuiteArg::Duality => Suite::Duality,
        SuiteArg::Lagrangian => Suite::Lagrangian,
        SuiteArg::Gradient => Suite::Gradient,
        SuiteArg::Oracle => Suite::Oracle,
        SuiteArg::All => Suite::All,
    };
    let fault = args.inject_fault.map(|FaultArg::Sign| Fault::Sign);
    let report = verify::run(suite, args.seed, fault)?;
    for p in &report.properties {
        if !args.quiet || !p.passed {
            println!("{}", p.summary());
        }
    }
    let failures: Vec<&str> = report.failures().map(|p| p.name.as_str()).collect();
    if failures.is_empty() {
        println!("all {} properties passed ({:.1} s)", report.properties.len(), report.wall_time);
    } else {
        println!("{} of {} properties failed: {}", failures.len(), report.properties.len(), failures.join(", "));
    }
    if let Some(path) = &args.out {
        write_json(path, &report)?;
    }
    Ok(report.passed)
}

fn evaluate(args: EvaluateArgs) -> Result<bool> {
    let text = std::fs::read_to_string(&args.report).with_context(|| format!("reading {}", args.report.display()))?;
    let report: serde_json::Value = serde_json::from_str(&text)?;
    let spec: ProblemPreset = serde_json::from_value(report["problem"].clone()).context("report has no `problem`")?;
    let opts: SolveOptions = serde_json::from_value(report["solver"].clone()).context("report has no `solver`")?;
    let attained = report["attained_value"].as_f64().context("report has no `attained_value`")?;

    let problem = Problem::build(&spec, opts.epsilon_coercify)?;
    let disc = problem.discretization();
    let (times, physical) = read_trajectory(&args.trajectory)?;
    if physical.intervals() != disc.intervals || physical.dim() != problem.dim() {
        bail!(
            "dump has {} nodes of dimension {}, problem needs {} of dimension {}",
            physical.intervals() + 1,
            physical.dim(),
            disc.intervals + 1,
            problem.dim()
        );
    }
    for (k, t) in times.iter().enumerate() {
        if (t - disc.node_time(k)).abs() > 1e-12 * disc.horizon.max(1.0) {
            bail!("row {} has t = {t}, expected {}", k + 1, disc.node_time(k));
        }
    }
    let variables = problem.transform.from_physical(disc, &physical);
    let value = problem.functional.value(&variables).finite().context("functional is infinite on the dump")?;
    let diff = (value - attained).abs();
    println!("value         {value:.16e}");
    println!("reported      {attained:.16e}");
    println!("difference    {diff:.3e}");
    Ok(diff <= ROUNDTRIP_TOLERANCE)
}

fn presets(name: Option<String>) -> Result<bool> {
    match name {
        Some(n) => println!("{}", serde_json::to_string_pretty(&preset(&n)?)?),
        None => {
            for n in PRESET_NAMES {
                println!("{n:<26}{}", preset(n)?.description);
            }
        }
    }
    Ok(true)
}
