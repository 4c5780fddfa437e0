mod common;

use std::f64::consts::PI;
use std::time::Instant;

use parakam::probes::random_mean_free;
use parakam::small_divisor::{
    certify_diophantine, certify_rotation, delta_alpha, delta_alpha_inverse, fundamental_solution_partial,
    omega_derivative, omega_directional_inverse, FrequencyVector, RotationAngle,
};
use parakam::{Error, SpectralField, TorusGrid};
use rustfft::num_complex::Complex64;

use common::{brute_gamma, golden_alpha, golden_omega, rng};

#[test]
fn golden_gamma_matches_brute_force_and_settles() {
    let om = golden_omega();
    let mut last = 0.0;
    for k in [8, 16, 32, 64, 128] {
        let g = certify_diophantine(&om, 1.0, k).unwrap();
        let want = brute_gamma(&om, 1.0, k as i64);
        assert!((g - want).abs() <= 1e-12 * want, "K = {k}");
        assert!(g >= last);
        last = g;
    }
    // constant type: the certified constant stops growing
    let g64 = certify_diophantine(&om, 1.0, 64).unwrap();
    let g256 = certify_diophantine(&om, 1.0, 256).unwrap();
    assert!(g256 <= 1.05 * g64);
}

#[test]
fn diophantine_scaling_and_resonances() {
    let om = golden_omega();
    let g = certify_diophantine(&om, 1.0, 32).unwrap();
    let scaled: Vec<f64> = om.iter().map(|w| 2.5 * w).collect();
    let gs = certify_diophantine(&scaled, 1.0, 32).unwrap();
    assert!((gs - g / 2.5).abs() < 1e-12 * g);
    match certify_diophantine(&[1.0, 0.0], 1.0, 8) {
        Err(Error::ResonantMode { k, .. }) => assert_eq!(k, vec![0, 1]),
        other => panic!("{other:?}"),
    }
    assert!(matches!(certify_diophantine(&[1.0, 1.0], 1.0, 8), Err(Error::ResonantMode { .. })));
}

#[test]
fn rotation_gamma_by_direct_scan() {
    let alpha = golden_alpha();
    let got = certify_rotation(alpha, 1.0, 200).unwrap();
    let mut want: f64 = 0.0;
    for q in 1..=200 {
        for p in 0..=(2 * q) {
            let d = (q as f64 * alpha / PI - p as f64).abs();
            want = want.max(1.0 / (d * q as f64));
        }
    }
    assert!((got - want).abs() <= 1e-12 * want);
    // alpha = 2 pi p/q collides at q/2 .. q
    assert!(matches!(certify_rotation(2.0 * PI * 3.0 / 7.0, 1.0, 20), Err(Error::ResonantMode { .. })));
}

#[test]
fn single_mode_inverses() {
    let g = TorusGrid::new(1, 8).unwrap();
    let alpha = RotationAngle::certify(golden_alpha(), 1.0, 8).unwrap();
    let f = SpectralField::cosine(&g, &[1], 2.0);
    let v = delta_alpha_inverse(&f, &alpha).unwrap();
    let want = Complex64::new(1.0, 0.0) / (Complex64::from_polar(1.0, alpha.alpha) - 1.0);
    assert!((v.coeff(&[1]) - want).norm() < 1e-15);
    assert_eq!(v.mean(), 0.0);
    let shifted = f.add_constant(0.5);
    assert!(matches!(delta_alpha_inverse(&shifted, &alpha), Err(Error::NonzeroMean { .. })));

    let g2 = TorusGrid::new(2, 4).unwrap();
    let om = FrequencyVector::certify(&golden_omega(), 1.0, 4).unwrap();
    let f = SpectralField::cosine(&g2, &[2, -1], 1.0);
    let v = omega_directional_inverse(&f, &om).unwrap();
    let kw = 2.0 * om.omega[0] - om.omega[1];
    let want = SpectralField::sine(&g2, &[2, -1], 1.0 / kw);
    assert!(v.max_coeff_diff(&want) < 1e-15);
    assert!(matches!(
        omega_directional_inverse(&f.add_constant(1e-6), &om),
        Err(Error::NonzeroMean { .. })
    ));
    // roundoff means are zeroed
    assert!(omega_directional_inverse(&f.add_constant(1e-14), &om).is_ok());
}

#[test]
fn round_trips_and_norm_bounds_on_random_fields() {
    let t = Instant::now();
    let s = 2.0;
    let g1 = TorusGrid::new(1, 64).unwrap();
    let alpha = RotationAngle::certify(golden_alpha(), 1.0, 64).unwrap();
    let g2 = TorusGrid::new(2, 16).unwrap();
    let om = FrequencyVector::certify(&golden_omega(), 1.0, 16).unwrap();
    let mut r = rng(60);
    for _ in 0..100 {
        let f = random_mean_free(&g1, &mut r, 1.0);
        let v = delta_alpha_inverse(&f, &alpha).unwrap();
        assert!(delta_alpha(&v, alpha.alpha).max_coeff_diff(&f) < 1e-11);
        assert!(v.sobolev_norm(s) <= 2.0 * alpha.gamma * f.sobolev_norm(s + alpha.sigma));

        let f = random_mean_free(&g2, &mut r, 1.0);
        let v = omega_directional_inverse(&f, &om).unwrap();
        assert!(omega_derivative(&v, &om.omega).max_coeff_diff(&f) < 1e-11);
        assert!(v.sobolev_norm(s) <= om.gamma * f.sobolev_norm(s + om.sigma));
    }
    assert!(t.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn inverses_commute_with_translation() {
    let g = TorusGrid::new(2, 8).unwrap();
    let om = FrequencyVector::certify(&golden_omega(), 1.0, 8).unwrap();
    let f = random_mean_free(&g, &mut rng(61), 1.0);
    let a = omega_directional_inverse(&f.translate(&[0.4, 1.3]), &om).unwrap();
    let b = omega_directional_inverse(&f, &om).unwrap().translate(&[0.4, 1.3]);
    assert!(a.max_coeff_diff(&b) < 1e-15);
    let g1 = TorusGrid::new(1, 16).unwrap();
    let alpha = RotationAngle::certify(golden_alpha(), 1.0, 16).unwrap();
    let f = random_mean_free(&g1, &mut rng(62), 1.0);
    let a = delta_alpha_inverse(&f.translate(&[2.0]), &alpha).unwrap();
    let b = delta_alpha_inverse(&f, &alpha).unwrap().translate(&[2.0]);
    assert!(a.max_coeff_diff(&b) < 1e-14);
}

#[test]
fn fundamental_solution_cauchy_check() {
    let om = FrequencyVector::certify(&golden_omega(), 1.0, 64).unwrap();
    let tau = 4.0;
    let theta = [0.7, -1.9];
    let mut prev = fundamental_solution_partial(&om, tau, 8, &theta).unwrap();
    for k in [16, 32, 64] {
        let next = fundamental_solution_partial(&om, tau, k, &theta).unwrap();
        assert!(prev.1.is_finite());
        assert!((next.0 - prev.0).abs() <= prev.1, "K = {k}");
        assert!(next.1 < prev.1);
        prev = next;
    }
    let minus = fundamental_solution_partial(&om, tau, 32, &[-0.7, 1.9]).unwrap();
    let plus = fundamental_solution_partial(&om, tau, 32, &theta).unwrap();
    assert!((minus.0 + plus.0).abs() < 1e-13);
    assert!(matches!(
        fundamental_solution_partial(&om, 2.0, 8, &theta),
        Err(Error::InvalidParameter(_))
    ));
}
