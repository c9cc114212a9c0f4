use nalgebra::{DMatrix, DVector};

use roaid::dynamics::{sample_dataset, stable_example_system};
use roaid::grid::{generate_polar_grid, RegionSpec};
use roaid::kernels::{assemble_gram, Centers, KernelSpec};
use roaid::program::{assemble_program, CanonicalConic, ConicProgram, FitConfig};
use roaid::solver::{
    solve, solver_registry, verify_solution, BlockLabel, Cone, ConeBlock, ConeProgram, Solution, SolveStatus,
    SolverSettings,
};

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn trace_program() -> ConeProgram {
    let eye = v(&[1.0, 0.0, 1.0]);
    ConeProgram::new(
        DMatrix::zeros(3, 3),
        eye.clone(),
        0.0,
        -DMatrix::identity(3, 3),
        -eye,
        vec![ConeBlock::new(Cone::Psd(2), BlockLabel::PLowerBound)],
    )
    .unwrap()
}

fn paper_instance(config: &FitConfig) -> (ConicProgram, CanonicalConic) {
    let region = RegionSpec::ball(2, 1.5).unwrap();
    let grid = generate_polar_grid(&region, 15, 20).unwrap();
    let data = sample_dataset(&stable_example_system(), &[v(&[1.0, -1.0]), v(&[-1.0, -1.0])], 19, 10.0, 0.001, 1).unwrap();
    let centers = Centers::new(2, data.xs.clone(), grid.points).unwrap();
    let k = KernelSpec::gaussian(2.0).build().unwrap();
    let gram = assemble_gram(k.as_ref(), &centers);
    let prog = assemble_program(&gram, &data, &centers, config).unwrap();
    let canon = prog.canonicalize();
    (prog, canon)
}

#[test]
fn identity_solution_of_the_trace_problem_has_zero_residuals() {
    let program = trace_program();
    let exact = Solution {
        x: v(&[1.0, 0.0, 1.0]),
        z: v(&[1.0, 0.0, 1.0]),
        objective: 2.0,
        status: SolveStatus::Optimal,
        iterations: 0,
        solve_time: Default::default(),
    };
    let report = verify_solution(&program, &exact);
    assert_eq!(report.objective, 2.0);
    assert_eq!(report.max_primal_violation(), 0.0);
    assert_eq!(report.dual_residual, Some(0.0));
    assert_eq!(report.relative_gap, Some(0.0));
    assert_eq!(report.p_margin, Some(0.0));

    let solved = solve(&program, &SolverSettings::default()).unwrap();
    assert!(solved.is_optimal());
    assert!((&solved.x - &exact.x).amax() < 1e-7);
    let mut scaled = solved.clone();
    scaled.x *= 1.01;
    assert!(verify_solution(&program, &scaled).relative_gap.unwrap() > 1e-7);
}

#[test]
fn infeasible_program_is_not_reported_optimal() {
    // x >= 1 and x <= -1.
    let program = ConeProgram::new(
        DMatrix::zeros(1, 1),
        v(&[1.0]),
        0.0,
        DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]),
        v(&[-1.0, -1.0]),
        vec![ConeBlock::new(Cone::Nonneg(2), BlockLabel::Generic)],
    )
    .unwrap();
    let sol = solve(&program, &SolverSettings::default()).unwrap();
    assert!(!sol.is_optimal());
    assert!(sol.into_optimal().is_err());
}

#[test]
fn scaled_coefficients_break_optimality_on_the_paper_instance() {
    let config = FitConfig::constrained(1e-4);
    let (prog, canon) = paper_instance(&config);
    let sol = solve(&canon.cone, &config.solver_settings()).unwrap();
    assert!(sol.is_optimal());
    let cone_report = verify_solution(&canon.cone, &sol);
    assert!(cone_report.within(1e-6), "{cone_report:?}");
    let (a, p) = canon.recover(&sol.x);
    let duals = canon.recover_duals(&sol.z);
    let report = prog.kkt_report(&a, &p, Some(&duals));
    assert!(report.within(1e-6), "{report:?}");
    assert!(report.relative_gap.unwrap() <= 1e-6);

    let bumped = prog.kkt_report(&(&a * 1.01), &p, Some(&duals));
    assert!(bumped.max_ineq_violation > 1e-7 || bumped.relative_gap.unwrap() > 1e-7, "{bumped:?}");
}

#[test]
fn repeated_solves_are_deterministic() {
    let config = FitConfig::constrained(1e-3);
    let (_, canon) = paper_instance(&config);
    let reg = solver_registry();
    let ipm = reg.create("ipm", &Default::default()).unwrap();
    let a = ipm.solve(&canon.cone, &config.solver_settings()).unwrap();
    let b = ipm.solve(&canon.cone, &config.solver_settings()).unwrap();
    assert!((a.objective - b.objective).abs() <= 1e-10 * a.objective.abs().max(1.0));
    assert_eq!(a.x, b.x);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn scaling_the_objective_leaves_the_argmin_unchanged() {
    let config = FitConfig {
        rho: 1e-2,
        ..FitConfig::constrained(1e-3)
    };
    let (_, canon) = paper_instance(&config);
    let settings = config.solver_settings();
    let base = solve(&canon.cone, &settings).unwrap();
    let scaled = solve(&canon.cone.scale_objective(1e3), &settings).unwrap();
    assert!(base.is_optimal() && scaled.is_optimal());
    let (a0, p0) = canon.recover(&base.x);
    let (a1, p1) = canon.recover(&scaled.x);
    assert!((&a1 - &a0).amax() <= 1e-5 * a0.amax(), "A moved by {}", (&a1 - &a0).amax());
    assert!((&p1 - &p0).amax() <= 1e-5 * p0.amax(), "P moved by {}", (&p1 - &p0).amax());
    assert!((scaled.objective - 1e3 * base.objective).abs() <= 1e-5 * scaled.objective.abs());
}
