use std::f64::consts::PI;

use leafflow::leafgrid::{
    build_grid, inner_product_l2, laplacian, leaf_divergence, leaf_gradient, GridSpec, ScalarField,
};
use proptest::prelude::*;

fn smooth_coeffs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..6)
}

fn trig(coeffs: &[(f64, f64)], x: f64, y: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(k, (a, b))| {
            let k = (k + 1) as f64;
            a * (k * x + 0.3 * y).cos() + b * (k * x).sin() * y.cos()
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn div_grad_is_laplacian(coeffs in smooth_coeffs(), n in 8usize..80, torus in any::<bool>()) {
        let spec = if torus { GridSpec::torus(2.0 * PI, 2.0 * PI, n, n / 2 + 8) } else { GridSpec::circle(2.0 * PI, n) };
        let g = build_grid(&spec).unwrap();
        let f = g.sample(|x, y| trig(&coeffs, x, y)).unwrap();
        let d = leaf_divergence(&leaf_gradient(&f));
        prop_assert!(d.sup_distance(&laplacian(&f)).unwrap() <= 1e-12 * (1.0 + laplacian(&f).sup_norm()));
    }

    #[test]
    fn laplacian_is_self_adjoint(a in smooth_coeffs(), b in smooth_coeffs(), n in 8usize..64) {
        let g = build_grid(&GridSpec::circle(2.0 * PI, n)).unwrap();
        let f = g.sample(|x, _| trig(&a, x, 0.0)).unwrap();
        let h = g.sample(|x, _| trig(&b, x, 1.0)).unwrap();
        let lhs = inner_product_l2(&laplacian(&f), &h).unwrap();
        let rhs = inner_product_l2(&f, &laplacian(&h)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn gradient_is_minus_adjoint_of_divergence(a in smooth_coeffs(), n in 8usize..64) {
        // (∇f, X) = −(f, Div X) with the edge pairing h Σ.
        let g = build_grid(&GridSpec::circle(2.0 * PI, n)).unwrap();
        let f = g.sample(|x, _| trig(&a, x, 0.0)).unwrap();
        let xf = leaf_gradient(&g.sample(|x, _| trig(&a, 2.0 * x, 0.5)).unwrap());
        let grad = leaf_gradient(&f);
        let lhs: f64 = grad.components().iter().zip(xf.components()).map(|(p, q)| p * q).sum::<f64>() * g.hx();
        let rhs = -inner_product_l2(&f, &leaf_divergence(&xf)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn trig_quadrature_is_exact(j in 0usize..15, k in 0usize..15) {
        let n = 32;
        let g = build_grid(&GridSpec::circle(2.0 * PI, n)).unwrap();
        let f = g.sample(|x, _| (j as f64 * x).cos()).unwrap();
        let h = g.sample(|x, _| (k as f64 * x).cos()).unwrap();
        let expected = match (j, k) {
            (0, 0) => 2.0 * PI,
            _ if j == k => PI,
            _ => 0.0,
        };
        prop_assert!((inner_product_l2(&f, &h).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn laplacian_refinement_ratio() {
    let err = |n: usize| {
        let g = build_grid(&GridSpec::circle(2.0 * PI, n)).unwrap();
        let f = g.sample(|x, _| (x.sin()).exp()).unwrap();
        let exact = g.sample(|x, _| (x.cos().powi(2) - x.sin()) * x.sin().exp()).unwrap();
        laplacian(&f).sup_distance(&exact).unwrap()
    };
    for n in [32, 64, 128] {
        let ratio = err(n) / err(2 * n);
        assert!((ratio - 4.0).abs() <= 0.4, "N = {n}: ratio {ratio}");
    }
}

#[test]
fn interval_laplacian_refinement() {
    let err = |n: usize| {
        let g = build_grid(&GridSpec::interval(1.0, n, 0.0, 1.0f64.sin())).unwrap();
        let f = g.sample(|x, _| x.sin()).unwrap();
        let exact = g.sample(|x, _| -x.sin()).unwrap();
        laplacian(&f).sup_distance(&exact).unwrap()
    };
    let ratio = err(33) / err(65);
    assert!((ratio - 4.0).abs() <= 0.4, "ratio {ratio}");
}

#[test]
fn fields_are_shareable_across_threads() {
    let g = build_grid(&GridSpec::circle(1.0, 16)).unwrap();
    let f = ScalarField::constant(&g, 1.0).unwrap();
    let handle = std::thread::spawn(move || laplacian(&f).sup_norm());
    assert_eq!(handle.join().unwrap(), 0.0);
}
