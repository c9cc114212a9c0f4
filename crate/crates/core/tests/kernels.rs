use nalgebra::DVector;
use proptest::prelude::*;

use roaid::kernels::{assemble_feature_vector, assemble_gram, feature_jacobian, Centers, KernelSpec};
use roaid::linalg::min_eigenvalue;

fn spec_strategy() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.2f64..3.0).prop_map(KernelSpec::gaussian),
        (1u32..5, 0.0f64..2.0).prop_map(|(d, c)| KernelSpec::polynomial(d, c)),
    ]
}

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

proptest! {
    #[test]
    fn kernel_is_symmetric(spec in spec_strategy(), x in point(3), y in point(3)) {
        let k = spec.build().unwrap();
        let (a, b) = (k.eval(&x, &y), k.eval(&y, &x));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        for i in 0..3 {
            let g2 = k.grad_second(i, &x, &y);
            prop_assert!((g2 - k.grad_first(i, &y, &x)).abs() <= 1e-12 * g2.abs().max(1.0));
            for j in 0..3 {
                let m1 = k.mixed_second(i, j, &x, &y);
                let m2 = k.mixed_second(j, i, &y, &x);
                prop_assert!((m1 - m2).abs() <= 1e-10 * m1.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gram_is_symmetric_and_psd(spec in spec_strategy(), pts in prop::collection::vec(point(2), 1..12)) {
        let k = spec.build().unwrap();
        let data: Vec<DVector<f64>> = pts.into_iter().map(DVector::from_vec).collect();
        let centers = Centers::new(2, data, vec![]).unwrap();
        let gram = assemble_gram(k.as_ref(), &centers);
        let scale = gram.k.amax().max(1.0);
        prop_assert!((&gram.k - gram.k.transpose()).amax() <= 1e-12 * scale);
        prop_assert!(min_eigenvalue(&gram.k) >= -1e-8 * gram.k.trace() / gram.m() as f64);
    }
}

#[test]
fn derivative_sections_of_the_gram_match_the_feature_jacobian() {
    let k = KernelSpec::gaussian(0.8).build().unwrap();
    let data = vec![DVector::from_vec(vec![0.4, -0.3]), DVector::from_vec(vec![-1.0, 0.9])];
    let grid = vec![DVector::from_vec(vec![1.2, 0.1])];
    let centers = Centers::new(2, data, grid).unwrap();
    let gram = assemble_gram(k.as_ref(), &centers);
    let j = gram.k.columns(centers.derivative_index(0), 2).into_owned();
    assert!((&j - &gram.jacobian).amax() < 1e-14);
    let origin = DVector::zeros(2);
    let jac = feature_jacobian(k.as_ref(), &centers, &origin).unwrap();
    assert!((jac - &gram.jacobian).amax() < 1e-14);

    let h = 1e-6;
    let x = DVector::from_vec(vec![0.3, -0.2]);
    let analytic = feature_jacobian(k.as_ref(), &centers, &x).unwrap();
    for axis in 0..2 {
        let mut e = DVector::zeros(2);
        e[axis] = h;
        let fd = (assemble_feature_vector(k.as_ref(), &centers, &(&x + &e)).unwrap()
            - assemble_feature_vector(k.as_ref(), &centers, &(&x - &e)).unwrap())
            / (2.0 * h);
        assert!((fd - analytic.column(axis)).amax() < 1e-8);
    }
}

#[test]
fn gaussian_values_at_known_points() {
    let k = KernelSpec::gaussian(1.0).build().unwrap();
    assert_eq!(k.eval(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
    assert!((k.eval(&[1.0, 0.0], &[0.0, 0.0]) - (-0.5f64).exp()).abs() < 1e-15);
    assert!((k.mixed_second(0, 0, &[0.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    assert_eq!(k.mixed_second(0, 1, &[0.0, 0.0], &[0.0, 0.0]), 0.0);

    let p = KernelSpec::polynomial(2, 1.0).build().unwrap();
    assert_eq!(p.eval(&[1.0, 2.0], &[3.0, -1.0]), 4.0);
    assert_eq!(p.grad_first(0, &[1.0, 2.0], &[3.0, -1.0]), 12.0);
}
