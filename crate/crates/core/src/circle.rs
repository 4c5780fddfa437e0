//! Conjugacy of the circle map `x -> x + alpha + f(x)` to the rotation by
//! `alpha`: find u, lambda with `u(x + alpha) - u(x) = f(x + u(x)) - lambda`.
//!
//! The standard and refined modes iterate the para-inverse form
//! `u = T_{1/(1+u')}^{-1} Delta^{-1} T_{1+u'(.+alpha)}^{-1} [rest - R_1(u) - lambda]`
//! where `rest = f o (Id+u) - T_{f' o (Id+u)} u`, assembled as `f + R_PL` in
//! standard mode and as `chi* f + R_A(chi) f` in refined mode.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::littlewood_paley::DyadicCutoff;
use crate::para::{self, InvertOptions, ParaOp};
use crate::report::{IterationRow, SolveReport, Status};
use crate::small_divisor::{delta_alpha, delta_alpha_inverse, RotationAngle};
use crate::spectral::{SpectralField, VectorField};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CircleMode {
    Standard,
    Refined,
    Naive,
}

#[derive(Clone, Debug)]
pub struct CircleProblem {
    pub alpha: RotationAngle,
    pub f: SpectralField,
    pub s: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub mode: CircleMode,
    /// Window of the para-composition in refined mode.
    pub window: usize,
    pub inner: InvertOptions,
}

impl CircleProblem {
    pub fn new(alpha: RotationAngle, f: SpectralField, s: f64) -> Self {
        CircleProblem {
            alpha,
            f,
            s,
            tol: 1e-10,
            max_iter: 50,
            mode: CircleMode::Standard,
            window: 2,
            inner: InvertOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CircleSolution {
    pub u: SpectralField,
    pub lambda: f64,
    pub report: SolveReport,
}

fn displacement(u: &SpectralField) -> VectorField {
    VectorField::new(vec![u.clone()]).expect("one component")
}

/// `min(1 + u')` on the collocation grid.
fn min_slope(u: &SpectralField) -> f64 {
    u.derivative(0)
        .samples()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(1.0 + v))
}

/// `R_1(u) = (Delta u - T_{Delta u' / (1+u')} u) - T_{1+u'(.+alpha)} Delta T_{1/(1+u')} u`.
pub fn r1_remainder(
    u: &SpectralField,
    alpha: f64,
    cut: &DyadicCutoff,
) -> Result<SpectralField> {
    let du = u.derivative(0);
    let one_plus = du.add_constant(1.0);
    let inner_sym = one_plus.map_samples(|v| 1.0 / v);
    let outer_sym = du.translate(&[alpha]).add_constant(1.0);
    let ratio_sym = delta_alpha(&du, alpha).product(&inner_sym)?;
    let lhs = &delta_alpha(u, alpha) - &para::para_product(&ratio_sym, u, cut)?;
    let inner = para::para_product(&inner_sym, u, cut)?;
    let rhs = para::para_product(&outer_sym, &delta_alpha(&inner, alpha), cut)?;
    Ok(&lhs - &rhs)
}

/// One application of the fixed-point map; returns `(u_next, lambda)`.
pub fn g_map(
    u: &SpectralField,
    problem: &CircleProblem,
    cut: &DyadicCutoff,
) -> Result<(SpectralField, f64)> {
    let slope = min_slope(u);
    if slope <= 0.0 {
        return Err(Error::DiffeomorphismLost(slope));
    }
    let alpha = problem.alpha.alpha;
    let f = &problem.f;
    let disp = displacement(u);
    let comp = f.compose_warped(&disp)?;

    if problem.mode == CircleMode::Naive {
        let lambda = comp.mean();
        let next = delta_alpha_inverse(&comp.remove_mean(), &problem.alpha)?;
        return Ok((next, lambda));
    }

    let fprime_comp = f.derivative(0).compose_warped(&disp)?;
    let rest = match problem.mode {
        CircleMode::Standard => {
            let r_pl = para::pl_remainder(&comp, f, &fprime_comp, u, cut)?;
            f + &r_pl
        }
        _ => {
            let star = para::para_compose(f, &disp, cut, problem.window)?;
            let t = para::para_product(&fprime_comp, u, cut)?;
            let r_a = &(&comp - &star) - &t;
            &star + &r_a
        }
    };
    let g = &rest - &r1_remainder(u, alpha, cut)?;

    let du = u.derivative(0);
    let outer = ParaOp::new(&du.translate(&[alpha]).add_constant(1.0), cut)?;
    let tg = para::para_invert_with(&outer, &g, problem.inner)?;
    let t1 = para::para_invert_with(&outer, &SpectralField::constant(u.grid(), 1.0), problem.inner)?;
    let lambda = tg.mean() / t1.mean();
    let h = &tg - &t1.scale(lambda);
    let w = delta_alpha_inverse(&h, &problem.alpha)?;
    let inner_sym = du.add_constant(1.0).map_samples(|v| 1.0 / v);
    let next = para::para_invert(&inner_sym, &w, cut, problem.inner)?;
    Ok((next, lambda))
}

/// `Delta u - f o (Id+u) + lambda` and its sup and H^s norms.
pub fn residual(
    u: &SpectralField,
    lambda: f64,
    problem: &CircleProblem,
) -> Result<(SpectralField, f64, f64)> {
    let comp = problem.f.compose_warped(&displacement(u))?;
    let e = (&delta_alpha(u, problem.alpha.alpha) - &comp).add_constant(lambda);
    let sup = e.sup_norm();
    let hs = e.sobolev_norm(problem.s);
    Ok((e, sup, hs))
}

/// Neumann certificate `||T_{E'/(1+u')} u||_{H^s} / ||E||_{H^s}` on the
/// actual residual E; 0 when E vanishes.
pub fn certify(
    u: &SpectralField,
    lambda: f64,
    problem: &CircleProblem,
    cut: &DyadicCutoff,
) -> Result<f64> {
    let (e, _, hs) = residual(u, lambda, problem)?;
    if hs == 0.0 {
        return Ok(0.0);
    }
    let inv = u.derivative(0).add_constant(1.0).map_samples(|v| 1.0 / v);
    let sym = e.derivative(0).product(&inv)?;
    let t = para::para_product(&sym, u, cut)?;
    Ok(t.sobolev_norm(problem.s) / hs)
}

/// Picard iteration from u = 0.
pub fn solve(problem: &CircleProblem) -> Result<CircleSolution> {
    let start = Instant::now();
    let grid = problem.f.grid();
    if grid.dim() != 1 {
        return Err(Error::UnsupportedDimension(grid.dim()));
    }
    let cut = DyadicCutoff::new(grid);
    let mut report = SolveReport::new();
    let mut u = SpectralField::zeros(grid);
    let mut lambda = 0.0;
    for iter in 1..=problem.max_iter {
        let (next, lam) = g_map(&u, problem, &cut)?;
        let increment = (&next - &u).sobolev_norm(problem.s);
        u = next;
        lambda = lam;
        let (_, sup, hs) = residual(&u, lambda, problem)?;
        report.push(IterationRow {
            iter,
            increment_hs: increment,
            residual_sup: sup,
            residual_hs: hs,
            params: vec![lambda],
            kappa: 0.0,
        });
        if increment < problem.tol || sup < problem.tol / 10.0 {
            report.status = Status::Converged;
            break;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    if report.status != Status::Converged {
        return Err(Error::MaxIterExceeded(Box::new(report)));
    }
    let kappa = certify(&u, lambda, problem, &cut)?;
    report.extra.insert("certificate_kappa".into(), kappa);
    report.extra.insert("min_slope".into(), min_slope(&u));
    report.extra.insert("u_hs".into(), u.sobolev_norm(problem.s));
    Ok(CircleSolution { u, lambda, report })
}

/// Smooth weight `exp(-1/(t(1-t)))` on (0, 1).
fn bump(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        (-1.0 / (t * (1.0 - t))).exp()
    }
}

/// Rotation number of the lift `T(x) = x + alpha + f(x) - lambda` from the
/// orbit of 0: weighted Birkhoff average of the increments `T(x_n) - x_n`.
pub fn rotation_number(alpha: f64, f: &SpectralField, lambda: f64, iterations: usize) -> f64 {
    let mut x = 0.0f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for n in 0..iterations {
        let step = alpha + f.eval(&[x.rem_euclid(2.0 * std::f64::consts::PI)]) - lambda;
        let w = bump((n as f64 + 0.5) / iterations as f64);
        num += w * step;
        den += w;
        x += step;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::TorusGrid;
    use std::f64::consts::PI;

    fn golden() -> RotationAngle {
        RotationAngle::certify(PI * (5f64.sqrt() - 1.0), 1.0, 64).unwrap()
    }

    #[test]
    fn zero_forcing_fixed_point() {
        let g = TorusGrid::new(1, 16).unwrap();
        let p = CircleProblem::new(golden(), SpectralField::zeros(&g), 3.0);
        let cut = DyadicCutoff::new(&g);
        let (u, l) = g_map(&SpectralField::zeros(&g), &p, &cut).unwrap();
        assert!(u.is_zero() && l == 0.0);
        let sol = solve(&p).unwrap();
        assert_eq!(sol.report.iterations(), 1);
    }

    #[test]
    fn mean_of_forcing_is_first_lambda() {
        let g = TorusGrid::new(1, 16).unwrap();
        let f = &SpectralField::cosine(&g, &[1], 0.01) + &SpectralField::constant(&g, 0.3);
        let p = CircleProblem::new(golden(), f, 3.0);
        let cut = DyadicCutoff::new(&g);
        let (_, l) = g_map(&SpectralField::zeros(&g), &p, &cut).unwrap();
        assert!((l - 0.3).abs() < 1e-15);
    }

    #[test]
    fn pure_shift_rotation_number() {
        let g = TorusGrid::new(1, 4).unwrap();
        let rho = rotation_number(1.0, &SpectralField::zeros(&g), 0.1, 1000);
        assert!((rho - 0.9).abs() < 1e-12);
    }

    #[test]
    fn folding_map_rejected() {
        let g = TorusGrid::new(1, 16).unwrap();
        let p = CircleProblem::new(golden(), SpectralField::zeros(&g), 3.0);
        let cut = DyadicCutoff::new(&g);
        let u = SpectralField::sine(&g, &[2], 0.6);
        assert!(matches!(g_map(&u, &p, &cut), Err(Error::DiffeomorphismLost(_))));
    }
}
