use germcanop::fields::{fd_consistency, quadratic_jet, DerivativeMode, Jet, ScalarField, VectorField};
use germcanop::linalg::CMatrix;
use germcanop::{Complex, Error, ScalarField32};
use proptest::prelude::*;

fn sin_product() -> ScalarField<f64> {
    ScalarField::analytic(2, |x: &[f64]| {
        let (s, c) = (x[0] * x[1]).sin_cos();
        Jet {
            value: Complex::new(s, 0.0),
            gradient: vec![Complex::new(x[1] * c, 0.0), Complex::new(x[0] * c, 0.0)],
            hessian: CMatrix::from_real(2, 2, &[-x[1] * x[1] * s, c - x[0] * x[1] * s, c - x[0] * x[1] * s, -x[0] * x[0] * s]),
        }
    })
}

#[test]
fn fd_gradient_of_sin_product_matches_closed_form() {
    let exact = sin_product();
    let fd = ScalarField::real(2, |x: &[f64]| (x[0] * x[1]).sin()).with_step(1e-5);
    let x = [0.3, 0.7];
    let ge = exact.eval_jet(&x).unwrap().gradient;
    let gf = fd.eval_jet(&x).unwrap().gradient;
    let norm = ge.iter().map(|g| g.norm_sqr()).sum::<f64>().sqrt();
    let err = ge.iter().zip(&gf).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    assert!(err / norm <= 1e-6, "relative error {err}");
}

#[test]
fn quadratic_fields_are_differenced_exactly() {
    let a = [2.0, 0.5, 0.5, 3.0];
    let b = [1.0, -1.0];
    let f = ScalarField::analytic(2, move |x| quadratic_jet(&a, &b, 0.25, x));
    let pts: Vec<Vec<f64>> = (0..10).map(|i| vec![0.3 * i as f64 - 1.0, 0.1 * i as f64]).collect();
    let report = fd_consistency(&f, &pts).unwrap();
    assert!(report.max_gradient_error <= 1e-8, "{:?}", report.max_gradient_error);
    assert_eq!(report.points.len(), pts.len());
}

#[test]
fn flat_function_derivatives_near_half() {
    let f = ScalarField::analytic(1, |x: &[f64]| {
        let t = x[0];
        let e = (-1.0 / (t * t)).exp();
        let d1 = 2.0 / t.powi(3) * e;
        let d2 = (4.0 / t.powi(6) - 6.0 / t.powi(4)) * e;
        Jet { value: Complex::new(e, 0.0), gradient: vec![Complex::new(d1, 0.0)], hessian: CMatrix::from_real(1, 1, &[d2]) }
    });
    let report = fd_consistency(&f, &[vec![0.5], vec![0.45], vec![0.55]]).unwrap();
    assert!(report.max_gradient_error <= 1e-5);
    assert!(report.max_hessian_error <= 1e-5);
}

#[test]
fn fd_consistency_rejects_empty_samples() {
    assert!(matches!(fd_consistency(&sin_product(), &[]), Err(Error::InvalidInput(_))));
}

#[test]
fn central_difference_error_is_second_order() {
    let exact = |x: f64| x.exp() * (x.sin() + x.cos());
    let x = 0.7;
    let err = |h: f64| {
        let f = ScalarField::real(1, |x: &[f64]| x[0].sin() * x[0].exp()).with_step(h);
        (f.eval_jet(&[x]).unwrap().gradient[0].re - exact(x)).abs()
    };
    let ratio = err(1e-2) / err(5e-3);
    assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn complex_fields_differentiate_both_parts() {
    let f = ScalarField::new(1, |x: &[f64]| Complex::new(x[0] * x[0], x[0].powi(3)));
    let j = f.eval_jet(&[0.5]).unwrap();
    assert!((j.gradient[0] - Complex::new(1.0, 0.75)).norm() < 1e-8);
    assert!((j.hessian[(0, 0)] - Complex::new(2.0, 3.0)).norm() < 1e-5);
    assert!(matches!(f.mode(), DerivativeMode::FiniteDifference { .. }));
}

#[test]
fn vector_field_rejects_mixed_dimensions() {
    let a = ScalarField::<f64>::real(1, |x| x[0]);
    let b = ScalarField::<f64>::real(2, |x| x[0]);
    assert!(VectorField::new(vec![a.clone(), b]).is_err());
    let v = VectorField::new(vec![a.clone(), a]).unwrap();
    let j = v.jacobian(&[2.0]).unwrap();
    assert!((j[(1, 0)].re - 1.0).abs() < 1e-9);
}

#[test]
fn single_precision_fields_work() {
    let f = ScalarField32::real(1, |x| x[0] * x[0]);
    let j = f.eval_jet(&[1.5f32]).unwrap();
    assert!((j.gradient[0].re - 3.0).abs() < 1e-2);
    assert!((j.hessian[(0, 0)].re - 2.0).abs() < 5e-2);
}

proptest! {
    #[test]
    fn fd_hessian_is_symmetric(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let f = ScalarField::new(2, |p: &[f64]| Complex::new((p[0] * p[1]).sin() + p[0].powi(3), p[1].cos() * p[0]));
        let h = f.eval_jet(&[x, y]).unwrap().hessian;
        let asym = (&h - &h.transpose()).norm();
        prop_assert!(asym <= 1e-6 * (1.0 + h.norm()));
    }

    #[test]
    fn analytic_jets_pass_through_unmodified(x in -1.0f64..1.0, y in -1.0f64..1.0) {
        let f = sin_product();
        let j = f.eval_jet(&[x, y]).unwrap();
        let (s, c) = (x * y).sin_cos();
        // Same formula compiled at two call sites may differ in the last ulp;
        // a finite-difference fallback would be off by ~1e-6.
        let ulps = |a: f64, b: f64| (a - b).abs() / (f64::EPSILON * b.abs().max(1.0));
        prop_assert!(ulps(j.value.re, s) <= 4.0);
        prop_assert!(ulps(j.hessian[(0, 1)].re, c - x * y * s) <= 4.0);
    }
}
