use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use roaid::dynamics::{
    example_system, integrate, sample_dataset, stable_example_system, system_registry, LinearField, VectorField,
};
use roaid::registry::Params;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

#[test]
fn rk4_is_fourth_order() {
    let decay = LinearField::new(DMatrix::from_element(1, 1, -1.0));
    let exact = (-1.0f64).exp();
    let err = |dt: f64| (integrate(&decay, &v(&[1.0]), 1.0, dt).unwrap().last()[0] - exact).abs();
    for dt in [0.2, 0.1, 0.05] {
        assert!(err(dt) / err(dt / 2.0) >= 14.0);
    }
    assert!(err(1e-3) <= 1e-9);
}

#[test]
fn printed_and_stable_benchmarks_differ_only_in_the_coupling() {
    let reg = system_registry();
    let printed = reg.create("eq27", &Params::new()).unwrap();
    let stable = reg.create("eq27-stable", &Params::new()).unwrap();
    let custom = reg.create("cubic", &Params::new().with("coupling", 20.0)).unwrap();
    let x = v(&[1.0, -1.0]);
    assert_eq!(printed.eval(&x), v(&[-4.0, -21.0]));
    assert_eq!(stable.eval(&x), v(&[-4.0, 19.0]));
    assert_eq!(custom.eval(&x), stable.eval(&x));
    assert_eq!(printed.eval(&x), example_system().eval(&x));
    assert_eq!(
        printed.jacobian(&v(&[0.0, 0.0])),
        DMatrix::from_row_slice(2, 2, &[-4.0, -5.0, -20.0, -4.0])
    );
}

#[test]
fn stable_benchmark_trajectories() {
    let f = stable_example_system();
    for x0 in [v(&[1.0, -1.0]), v(&[-1.0, -1.0]), v(&[-1.0, 1.0]), v(&[-1.45, 0.0])] {
        let t = integrate(&f, &x0, 10.0, 1e-3).unwrap();
        assert!(!t.diverged);
        assert!(t.last().norm() <= 0.05);
    }
    assert!(integrate(&f, &v(&[1.0, 1.5]), 10.0, 1e-3).unwrap().diverged);
}

#[test]
fn paper_sized_dataset() {
    let f = stable_example_system();
    let inits = [v(&[1.0, -1.0]), v(&[-1.0, -1.0])];
    let d = sample_dataset(&f, &inits, 19, 10.0, 0.001, 7).unwrap();
    assert_eq!(d.len(), 38);
    let resid: Vec<f64> = d.xs.iter().zip(&d.ys).flat_map(|(x, y)| (y - f.eval(x)).iter().copied().collect::<Vec<_>>()).collect();
    let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
    assert!(var > 0.0002 && var < 0.004, "sample noise variance {var}");
    assert_eq!(d.meta.seed, Some(7));
}

proptest! {
    #[test]
    fn rk4_matches_the_matrix_exponential(a in -2.0f64..0.0, b in -2.0f64..2.0, c in -2.0f64..2.0, x0 in -1.0f64..1.0, y0 in -1.0f64..1.0) {
        let m = DMatrix::from_row_slice(2, 2, &[a, b, -b, c.min(0.0)]);
        let t = integrate(&LinearField::new(m.clone()), &v(&[x0, y0]), 1.0, 1e-3).unwrap();
        let exact = (m).exp() * v(&[x0, y0]);
        prop_assert!((t.last() - exact).norm() <= 1e-9);
    }
}
