use selfdual::problems::{preset, solve_problem, BoundarySpec, Check, VecSpec, Problem, PRESET_NAMES};
use selfdual::solver::SolveOptions;

fn quick() -> SolveOptions {
    SolveOptions { restarts: 0, ..Default::default() }
}

#[test]
fn every_preset_certifies() {
    for name in PRESET_NAMES {
        let spec = preset(name).unwrap();
        let solution = solve_problem(&spec, &quick()).unwrap();
        let r = &solution.report;
        assert!(r.certified, "{name}: value {:.3e} scale {:.3e}", r.attained_value, r.scale);
        assert!(r.boundary_residual <= 1e-6, "{name}: boundary {:.3e}", r.boundary_residual);
        if let Some(err) = r.oracle_error {
            assert!(err <= 1e-3, "{name}: oracle {err:.3e}");
        }
        if let Some(mild) = r.mild_residual {
            assert!(mild <= 1e-3, "{name}: mild {mild:.3e}");
        }
    }
}

#[test]
fn refinement_is_second_order() {
    let error_at = |intervals| {
        let mut spec = preset("gl_skew").unwrap();
        spec.intervals = intervals;
        solve_problem(&spec, &quick()).unwrap().report.oracle_error.unwrap()
    };
    let ratio = error_at(16) / error_at(32);
    assert!((3.0..=5.0).contains(&ratio), "{ratio}");
}

#[test]
fn antiperiodic_boundary_matches_oracle() {
    let mut spec = preset("gl_skew").unwrap();
    spec.boundary = BoundarySpec::Antiperiodic;
    let r = solve_problem(&spec, &quick()).unwrap().report;
    assert!(r.certified);
    assert!(r.boundary_residual <= 1e-6);
    assert!(r.oracle_error.unwrap() <= 1e-3);
}

#[test]
fn coercified_initial_value_problem_has_same_solution() {
    let mut spec = preset("gl_skew").unwrap();
    let half = VecSpec::Constant { value: 0.5 };
    spec.boundary = BoundarySpec::Initial { value: VecSpec::Stack { parts: vec![half.clone(), half] } };
    let plain = solve_problem(&spec, &quick()).unwrap();
    let opts = SolveOptions { epsilon_coercify: Some(0.5), ..quick() };
    let coercive = solve_problem(&spec, &opts).unwrap();
    assert!(coercive.report.certified);
    let gap = plain.trajectory.sup_distance(&coercive.trajectory);
    assert!(gap <= 1e-3, "{gap:.3e}");
    assert!(coercive.report.oracle_error.unwrap() <= 1e-3);
}

#[test]
fn mild_residual_is_rejected_for_hamiltonian() {
    let mut spec = preset("ham_bilaplacian").unwrap();
    spec.checks.push(Check::Mild);
    assert!(solve_problem(&spec, &quick()).is_err());
}

#[test]
fn reports_are_reproducible() {
    let spec = preset("gl_advection").unwrap();
    let opts = SolveOptions { restarts: 2, ..Default::default() };
    let a = solve_problem(&spec, &opts).unwrap();
    let b = solve_problem(&spec, &opts).unwrap();
    assert_eq!(a.report.attained_value.to_bits(), b.report.attained_value.to_bits());
    assert_eq!(a.trajectory, b.trajectory);
}

#[test]
fn solution_is_the_reference() {
    let problem = Problem::build(&preset("coupled_flow").unwrap(), None).unwrap();
    let solution = problem.solve(&quick()).unwrap();
    let reference = problem.reference().unwrap().unwrap();
    assert!(solution.trajectory.sup_distance(&reference) <= 1e-3);
}
