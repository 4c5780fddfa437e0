mod common;

use std::f64::consts::PI;

use parakam::probes::random_field;
use parakam::{SpectralField, TorusGrid, VectorField};
use rand::Rng;

use common::{convolve, direct_dft, rng, synthesize};

#[test]
fn cos_squared_matches_direct_dft() {
    let g = TorusGrid::new(1, 8).unwrap();
    let f = |x: &[f64]| x[0].cos().powi(2);
    let want = direct_dft(&g, 32, f);
    let samples: Vec<f64> = (0..g.sample_count()).map(|p| f(&g.sample_point(p)[..1])).collect();
    let got = SpectralField::analyze(&g, &samples).unwrap();
    for (a, b) in got.coeffs().iter().zip(&want) {
        assert!((a - b).norm() < 1e-14);
    }
    assert!((got.coeff(&[0]).re - 0.5).abs() < 1e-15);
    assert!((got.coeff(&[2]).re - 0.25).abs() < 1e-15);
    assert!((got.coeff(&[-2]).re - 0.25).abs() < 1e-15);
    assert!(got.coeff(&[1]).norm() < 1e-15);
}

#[test]
fn two_dimensional_analysis_matches_direct_dft() {
    let g = TorusGrid::new(2, 4).unwrap();
    let f = |x: &[f64]| (x[0] + 2.0 * x[1]).sin() + 0.3 * (3.0 * x[0] - x[1]).cos() + 0.1;
    let want = direct_dft(&g, 16, f);
    let got = SpectralField::from_fn(&g, f);
    for (a, b) in got.coeffs().iter().zip(&want) {
        assert!((a - b).norm() < 1e-14);
    }
}

#[test]
fn random_five_mode_field_matches_termwise_sum() {
    let g = TorusGrid::new(2, 6).unwrap();
    let mut r = rng(11);
    let mut f = SpectralField::zeros(&g);
    for _ in 0..5 {
        let k = [r.gen_range(-6i64..=6), r.gen_range(0i64..=6)];
        let c = rustfft::num_complex::Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
        f.add_real_mode(&k, c);
    }
    let eval = f.evaluator();
    for _ in 0..100 {
        let x = [r.gen_range(0.0..2.0 * PI), r.gen_range(0.0..2.0 * PI)];
        let want = synthesize(&f, &x);
        assert!((f.eval(&x) - want).abs() < 1e-12);
        assert!((eval.eval(&x) - want).abs() < 1e-12);
    }
}

#[test]
fn synthesis_round_trip() {
    let g = TorusGrid::new(2, 8).unwrap();
    let f = random_field(&g, &mut rng(3), 1.0);
    let back = SpectralField::analyze(&g, &f.samples()).unwrap();
    assert!(back.max_coeff_diff(&f) < 1e-12);
    let x = g.sample_point(37);
    assert!((f.samples()[37] - synthesize(&f, &x[..2])).abs() < 1e-12);
}

#[test]
fn leibniz_rule_on_band_limited_products() {
    let g = TorusGrid::new(1, 32).unwrap();
    let mut r = rng(5);
    let half = TorusGrid::new(1, 16).unwrap();
    for _ in 0..10 {
        // degree <= 16 each, so the product stays in the box
        let lift = |f: SpectralField| SpectralField::from_entries(&g, &f.to_entries()).unwrap();
        let f = lift(random_field(&half, &mut r, 1.0));
        let h = lift(random_field(&half, &mut r, 1.0));
        let lhs = f.product(&h).unwrap().derivative(0);
        let rhs = &f.derivative(0).product(&h).unwrap() + &f.product(&h.derivative(0)).unwrap();
        assert!(lhs.max_coeff_diff(&rhs) < 1e-11);
    }
}

#[test]
fn mean_matches_trapezoid_rule() {
    let g = TorusGrid::new(1, 16).unwrap();
    let f = random_field(&g, &mut rng(8), 1.0);
    // 40 nodes integrate degree 16 exactly
    let m = 40;
    let quad: f64 = (0..m).map(|i| synthesize(&f, &[2.0 * PI * i as f64 / m as f64])).sum::<f64>() / m as f64;
    assert!((f.mean() - quad).abs() < 1e-12);
}

#[test]
fn product_matches_convolution() {
    let g = TorusGrid::new(2, 8).unwrap();
    let mut r = rng(21);
    for _ in 0..5 {
        let a = random_field(&g, &mut r, 1.0);
        let b = random_field(&g, &mut r, 1.0);
        let got = a.product(&b).unwrap();
        assert!(got.max_coeff_diff(&convolve(&a, &b)) < 1e-11);
        assert!(got.max_coeff_diff(&b.product(&a).unwrap()) < 1e-15);
    }
}

#[test]
fn product_is_associative_with_padding() {
    let g = TorusGrid::new(1, 48).unwrap();
    let small = TorusGrid::new(1, 16).unwrap();
    let mut r = rng(22);
    let lift = |f: SpectralField| SpectralField::from_entries(&g, &f.to_entries()).unwrap();
    let a = lift(random_field(&small, &mut r, 1.0));
    let b = lift(random_field(&small, &mut r, 1.0));
    let c = lift(random_field(&small, &mut r, 1.0));
    let left = a.product(&b).unwrap().product(&c).unwrap();
    let right = a.product(&b.product(&c).unwrap()).unwrap();
    assert!(left.max_coeff_diff(&right) < 1e-11);
}

#[test]
fn warped_composition_matches_pointwise_evaluation() {
    let g = TorusGrid::new(1, 64).unwrap();
    let eps = 0.1;
    let f = SpectralField::cosine(&g, &[3], 1.0);
    let w = VectorField::new(vec![SpectralField::sine(&g, &[1], eps)]).unwrap();
    let comp = f.compose_warped(&w).unwrap();
    let mut r = rng(4);
    for _ in 0..200 {
        let x = r.gen_range(0.0..2.0 * PI);
        let want = (3.0 * (x + eps * x.sin())).cos();
        assert!((comp.eval(&[x]) - want).abs() < 1e-10);
    }
}

#[test]
fn warped_composition_on_the_two_torus() {
    let g = TorusGrid::new(2, 24).unwrap();
    let f = &SpectralField::cosine(&g, &[1, 2], 1.0) + &SpectralField::sine(&g, &[2, -1], 0.5);
    let w = VectorField::new(vec![
        SpectralField::sine(&g, &[0, 1], 0.05),
        SpectralField::cosine(&g, &[1, 0], 0.04),
    ])
    .unwrap();
    let comp = f.compose_warped(&w).unwrap();
    let mut r = rng(9);
    for _ in 0..50 {
        let x = [r.gen_range(0.0..2.0 * PI), r.gen_range(0.0..2.0 * PI)];
        let y = [x[0] + 0.05 * x[1].sin(), x[1] + 0.04 * x[0].cos()];
        let want = (y[0] + 2.0 * y[1]).cos() + 0.5 * (2.0 * y[0] - y[1]).sin();
        assert!((comp.eval(&x) - want).abs() < 1e-10);
    }
}

#[test]
fn constant_warp_is_translation() {
    let g = TorusGrid::new(2, 8).unwrap();
    let f = random_field(&g, &mut rng(10), 2.0);
    let w = VectorField::constant(&g, &[0.3, -1.1]);
    let comp = f.compose_warped(&w).unwrap();
    assert!(comp.max_coeff_diff(&f.translate(&[0.3, -1.1])) < 1e-12);
    let zero = f.compose_warped(&VectorField::zeros(&g, 2)).unwrap();
    assert!(zero.max_coeff_diff(&f) < 1e-13);
}

#[test]
fn derivative_commutes_with_translation_and_kills_means() {
    let g = TorusGrid::new(2, 8).unwrap();
    let f = random_field(&g, &mut rng(12), 1.0);
    let a = f.translate(&[0.7, 0.2]).derivative(1);
    let b = f.derivative(1).translate(&[0.7, 0.2]);
    // both sides are diagonal; only the order of two roundings differs
    assert!(a.max_coeff_diff(&b) < 1e-15);
    assert_eq!(f.derivative(0).mean(), 0.0);
}

#[test]
fn norms_are_monotone_and_bounded() {
    let g = TorusGrid::new(1, 32).unwrap();
    let mut r = rng(13);
    for _ in 0..20 {
        let f = random_field(&g, &mut r, 1.0);
        let mut last = 0.0;
        for s in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let v = f.sobolev_norm(s);
            assert!(v >= last);
            last = v;
        }
        assert!(f.sup_norm() <= f.coeff_abs_sum() + 1e-14);
    }
    let c = SpectralField::constant(&g, -2.5);
    assert_eq!(c.sobolev_norm(3.0), 2.5);
    assert_eq!(c.sup_norm(), 2.5);
    let two = SpectralField::cosine(&g, &[1], 2.0);
    assert!((two.sobolev_norm(0.0) - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn field_documents_survive_json() {
    let g = TorusGrid::new(3, 3).unwrap();
    let f = random_field(&g, &mut rng(14), 1.0);
    let back = SpectralField::from_json(&f.to_json()).unwrap();
    assert_eq!(back.grid(), f.grid());
    // modes at or below 1e-16 are not stored
    assert!(back.max_coeff_diff(&f) <= 1e-16);
}
