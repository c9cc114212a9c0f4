use nalgebra::{DMatrix, DVector};
use rand::Rng;

use roaid::dynamics::{sample_dataset, stable_example_system, DataSet, DataSetMeta};
use roaid::grid::{generate_polar_grid, RegionSpec};
use roaid::kernels::{assemble_gram, Centers, KernelSpec};
use roaid::linalg::sym;
use roaid::program::{assemble_program, BasisChoice, ConicProgram, FitConfig};
use roaid::sampling::stream_rng;
use roaid::solver::solve;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

struct Instance {
    data: DataSet,
    centers: Centers,
    kernel: KernelSpec,
}

fn instance(n_radial: usize, n_angular: usize) -> Instance {
    let region = RegionSpec::ball(2, 1.5).unwrap();
    let grid = generate_polar_grid(&region, n_radial, n_angular).unwrap();
    let data = sample_dataset(&stable_example_system(), &[v(&[1.0, -1.0]), v(&[-1.0, -1.0])], 19, 10.0, 0.001, 0).unwrap();
    let centers = Centers::new(2, data.xs.clone(), grid.points).unwrap();
    Instance {
        data,
        centers,
        kernel: KernelSpec::gaussian(2.0),
    }
}

fn program(inst: &Instance, config: &FitConfig) -> ConicProgram {
    let k = inst.kernel.build().unwrap();
    let gram = assemble_gram(k.as_ref(), &inst.centers);
    assemble_program(&gram, &inst.data, &inst.centers, config).unwrap()
}

#[test]
fn paper_sized_block_counts() {
    let inst = instance(15, 20);
    let full = program(&inst, &FitConfig::constrained(1e-3)).counts();
    assert_eq!(full.n_eq, 2);
    assert_eq!(full.n_ineq, 300);
    assert_eq!(full.lmi_dims, [2]);
    assert_eq!(full.p_psd_dim, Some(2));
    let abl = program(&inst, &FitConfig::ablation(1e-3)).counts();
    assert_eq!((abl.n_eq, abl.n_ineq, abl.p_psd_dim), (2, 0, None));
}

#[test]
fn canonical_form_agrees_with_direct_evaluation_on_random_points() {
    let inst = instance(4, 6);
    let config = FitConfig {
        rho: 0.1,
        ..FitConfig::constrained(1e-2)
    };
    let prog = program(&inst, &config);
    let mut rng = stream_rng(1, 0);
    for choice in [BasisChoice::Identity, BasisChoice::default()] {
        let canon = prog.canonicalize_with(choice);
        for _ in 0..50 {
            let x = DVector::from_fn(canon.n_vars(), |_, _| rng.random_range(-1.0..1.0));
            let (a, p) = canon.recover(&x);
            let direct = prog.objective(&a, &p);
            let via = canon.cone.objective(&x);
            assert!((direct - via).abs() <= 1e-10 * direct.abs().max(1.0), "{direct} vs {via}");

            let report = prog.kkt_report(&a, &p, None);
            let slack = canon.cone.slack(&x);
            let counts = prog.counts();
            let eq = slack.rows(0, counts.n_eq).amax();
            let ineq = slack.rows(counts.n_eq, counts.n_ineq).iter().fold(0.0_f64, |m, &s| m.max(-s));
            let scale = 1.0 + eq.max(ineq);
            assert!((report.max_eq_residual - eq).abs() <= 1e-10 * scale);
            assert!((report.max_ineq_violation - ineq).abs() <= 1e-10 * scale);
            let (a2, p2) = canon.recover(&canon.encode(&a, &p));
            assert!((&a2 - &a).amax() <= 1e-10 * (1.0 + a.amax()));
            assert!((&p2 - &p).amax() <= 1e-10 * (1.0 + p.amax()));
        }
    }
}

#[test]
fn ablation_feasible_set_contains_constrained_points_with_identity_p() {
    let inst = instance(4, 6);
    let fixed = FitConfig {
        fix_p_to_identity: true,
        ..FitConfig::constrained(1e-3)
    };
    let full = program(&inst, &fixed);
    let abl = program(&inst, &FitConfig::ablation(1e-3));
    let eye = DMatrix::identity(2, 2);
    let points: Vec<DMatrix<f64>> = [1e-4, 1e-2, 1.0]
        .iter()
        .map(|&lambda| {
            let prog = program(&inst, &FitConfig { lambda, ..fixed });
            let canon = prog.canonicalize();
            canon.recover(&solve(&canon.cone, &prog.config().solver_settings()).unwrap().x).0
        })
        .collect();
    let mut rng = stream_rng(2, 0);
    for _ in 0..30 {
        let w: Vec<f64> = (0..points.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = w.iter().sum();
        let a = points.iter().zip(&w).fold(DMatrix::zeros(2, full.m()), |acc, (p, wi)| acc + p * (*wi / total));
        assert!(full.kkt_report(&a, &eye, None).within(1e-6));
        // The ablation program has no grid rows, so its centers differ; its
        // constraints are the equilibrium and LMI rows, checked directly.
        let g0 = (&a * full.gram().column(0)).amax();
        let lmi = roaid::linalg::max_eigenvalue(&sym(&(&a * full.j())));
        assert!(g0 <= 1e-6 && lmi <= -1.0 + 1e-6);
    }
    assert_eq!(abl.counts().n_ineq, 0);
}

#[test]
fn zero_coefficients_violate_every_grid_row_and_the_lmi() {
    let inst = instance(3, 4);
    let prog = program(&inst, &FitConfig::constrained(1.0));
    let report = prog.kkt_report(&DMatrix::zeros(2, prog.m()), &DMatrix::identity(2, 2), None);
    let max_sq = inst.centers.grid_points().iter().map(|z| z.norm_squared()).fold(0.0, f64::max);
    assert!((report.max_ineq_violation - max_sq).abs() < 1e-12);
    assert!((report.lmi_margin.unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(report.p_margin, Some(0.0));
}

#[test]
fn linear_kernel_construction_is_feasible() {
    // With k(x, y) = x'y the derivative sections are the coordinates, so
    // weights -c on them give g(x) = -c x.
    let inst = Instance {
        kernel: KernelSpec::polynomial(1, 0.0),
        ..instance(5, 8)
    };
    let prog = program(&inst, &FitConfig::constrained(1e-3));
    for gamma in [0.5, 1.0, 2.0] {
        let c = 2.0 / gamma;
        let mut a = DMatrix::zeros(2, prog.m());
        for axis in 0..2 {
            a[(axis, inst.centers.derivative_index(axis))] = -c;
        }
        let report = prog.kkt_report(&a, &DMatrix::identity(2, 2), None);
        assert!(report.within(1e-12), "{report:?}");
        let bilinear = prog.kkt_report_bilinear(&(&a * 0.5), &(DMatrix::identity(2, 2) * 2.0));
        assert!(bilinear.within(1e-12));
    }
}

#[test]
fn dump_round_trips_through_text() {
    let inst = instance(2, 3);
    let canon = program(&inst, &FitConfig::constrained(1e-2)).canonicalize();
    let mut buf = Vec::new();
    canon.dump(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let back = roaid::program::read_dump(text.as_bytes()).unwrap();
    assert_eq!(back, canon.cone);
}

#[test]
fn invalid_configs_are_rejected() {
    let inst = instance(2, 3);
    let k = inst.kernel.build().unwrap();
    let gram = assemble_gram(k.as_ref(), &inst.centers);
    assert!(assemble_program(&gram, &inst.data, &inst.centers, &FitConfig::constrained(0.0)).is_err());
    let short = DataSet::new(2, inst.data.xs[..3].to_vec(), inst.data.ys[..3].to_vec(), DataSetMeta::default()).unwrap();
    assert!(assemble_program(&gram, &short, &inst.centers, &FitConfig::constrained(1.0)).is_err());
}
