mod common;

use std::f64::consts::PI;

use parakam::circle::{self, g_map, residual, rotation_number, CircleMode, CircleProblem};
use parakam::small_divisor::{delta_alpha_inverse, RotationAngle};
use parakam::{DyadicCutoff, SpectralField, TorusGrid};
use rustfft::num_complex::Complex64;

use common::golden_alpha;

fn angle(q: usize) -> RotationAngle {
    RotationAngle::certify(golden_alpha(), 1.0, q).unwrap()
}

/// Forcing whose circle map is conjugate to the rotation through `Id + u`:
/// `f(x + u(x)) = u(x + alpha) - u(x) + lambda`, built by inverting
/// `x -> x + u(x)` with Newton at every collocation point.
fn manufactured(grid: &TorusGrid, u: &SpectralField, alpha: f64, lambda: f64) -> SpectralField {
    let du = u.derivative(0);
    let vals: Vec<f64> = (0..grid.sample_count())
        .map(|p| {
            let y = grid.sample_point(p)[0];
            let mut x = y;
            for _ in 0..50 {
                let step = (x + u.eval(&[x]) - y) / (1.0 + du.eval(&[x]));
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            u.eval(&[x + alpha]) - u.eval(&[x]) + lambda
        })
        .collect();
    SpectralField::analyze(grid, &vals).unwrap()
}

#[test]
fn first_iterate_is_the_small_divisor_solution() {
    let g = TorusGrid::new(1, 32).unwrap();
    let eps = 0.01;
    let f = SpectralField::cosine(&g, &[1], eps);
    let p = CircleProblem::new(angle(32), f.clone(), 3.0);
    let cut = DyadicCutoff::new(&g);
    let (u1, l1) = g_map(&SpectralField::zeros(&g), &p, &cut).unwrap();
    assert!(l1.abs() < 1e-17);
    let c = Complex64::new(eps / 2.0, 0.0) / (Complex64::from_polar(1.0, p.alpha.alpha) - 1.0);
    assert!((u1.coeff(&[1]) - c).norm() < 1e-15);
    assert!((u1.coeff(&[-1]) - c.conj()).norm() < 1e-15);
    assert!(u1.max_coeff_diff(&delta_alpha_inverse(&f, &p.alpha).unwrap()) < 1e-16);
}

#[test]
fn trivial_residuals() {
    let g = TorusGrid::new(1, 16).unwrap();
    let zero = SpectralField::zeros(&g);
    let p = CircleProblem::new(angle(16), zero.clone(), 3.0);
    assert_eq!(residual(&zero, 0.0, &p).unwrap().1, 0.0);
    let p = CircleProblem::new(angle(16), SpectralField::constant(&g, 0.25), 3.0);
    assert!(residual(&zero, 0.25, &p).unwrap().1 < 1e-16);
    let sol = circle::solve(&p).unwrap();
    assert!((sol.lambda - 0.25).abs() < 1e-15);
    assert!(sol.u.sup_norm() < 1e-15);
}

#[test]
fn manufactured_conjugacy_is_recovered() {
    let g = TorusGrid::new(1, 64).unwrap();
    let alpha = golden_alpha();
    let u_star = &SpectralField::cosine(&g, &[1], 0.05) + &SpectralField::sine(&g, &[2], 0.02);
    let lambda_star = 0.01;
    let f = manufactured(&g, &u_star, alpha, lambda_star);
    let p = CircleProblem::new(angle(64), f, 3.0);
    let (_, sup, _) = residual(&u_star, lambda_star, &p).unwrap();
    assert!(sup <= 1e-11, "manufactured residual {sup:.3e}");
    let sol = circle::solve(&p).unwrap();
    assert!((sol.lambda - lambda_star).abs() < 1e-10, "lambda {}", sol.lambda);
    assert!(sol.u.max_coeff_diff(&u_star) < 1e-10);
}

#[test]
fn conjugate_forcing_needs_no_parameter() {
    let g = TorusGrid::new(1, 64).unwrap();
    let alpha = golden_alpha();
    let u_star = SpectralField::sine(&g, &[1], 0.04);
    let f = manufactured(&g, &u_star, alpha, 0.0);
    let p = CircleProblem::new(angle(64), f.clone(), 3.0);
    let sol = circle::solve(&p).unwrap();
    let last = sol.report.last().unwrap();
    assert!(sol.lambda.abs() <= 10.0 * last.residual_sup.max(1e-13), "lambda {}", sol.lambda);
    let rho = rotation_number(alpha, &f, sol.lambda, 100_000);
    assert!((rho - alpha).abs() < 1e-6);
}

#[test]
fn converged_run_satisfies_the_conjugacy_law() {
    let g = TorusGrid::new(1, 128).unwrap();
    let alpha = golden_alpha();
    let f = SpectralField::sine(&g, &[1], 0.05);
    let p = CircleProblem::new(angle(128), f.clone(), 3.0);
    let sol = circle::solve(&p).unwrap();
    for i in 0..512 {
        let x = 2.0 * PI * i as f64 / 512.0;
        let y = x + sol.u.eval(&[x]);
        let lhs = x + alpha + sol.u.eval(&[x + alpha]);
        let rhs = y + alpha + f.eval(&[y]) - sol.lambda;
        assert!((lhs - rhs).abs() < 1e-8, "x = {x}");
    }
    let inc: Vec<f64> = sol.report.rows.iter().map(|r| r.increment_hs).collect();
    let tail = &inc[inc.len().saturating_sub(5)..];
    assert!(tail.windows(2).all(|w| w[1] < w[0]), "{inc:?}");
}

#[test]
fn refined_and_naive_modes_converge_on_a_small_problem() {
    let g = TorusGrid::new(1, 64).unwrap();
    let f = SpectralField::sine(&g, &[1], 0.02);
    let mut p = CircleProblem::new(angle(64), f, 3.0);
    let std = circle::solve(&p).unwrap();
    p.mode = CircleMode::Refined;
    let refined = circle::solve(&p).unwrap();
    assert!((&refined.u - &std.u).sobolev_norm(3.0) < 1e-7);
    p.mode = CircleMode::Naive;
    let naive = circle::solve(&p).unwrap();
    assert!((naive.lambda - std.lambda).abs() < 1e-8);
}

#[test]
fn certificate_flags_large_residuals() {
    let g = TorusGrid::new(1, 64).unwrap();
    // a large smooth residual acting on a rough part of u that sits at a
    // near resonance of alpha (34 alpha / 2 pi is close to 21)
    let p = CircleProblem::new(angle(64), SpectralField::zeros(&g), 3.0);
    let cut = DyadicCutoff::new(&g);
    let u = &SpectralField::sine(&g, &[1], 0.3) + &SpectralField::sine(&g, &[34], 0.005);
    let kappa = circle::certify(&u, 0.0, &p, &cut).unwrap();
    assert!(kappa >= 1.0, "kappa {kappa}");
    let zero = CircleProblem::new(angle(64), SpectralField::zeros(&g), 3.0);
    assert_eq!(circle::certify(&SpectralField::zeros(&g), 0.0, &zero, &cut).unwrap(), 0.0);
}
