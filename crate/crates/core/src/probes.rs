//! Probe fields and decay measurements backing the operator estimates: random
//! and lacunary fields, single-block probes, log-log slope fits.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::kam::{self, HamiltonianData, ParaHomological, TorusEmbedding};
use crate::littlewood_paley::DyadicCutoff;
use crate::para::{self, InvertOptions, Nonlinearity};
use crate::small_divisor::FrequencyVector;
use crate::spectral::{MatrixField, SpectralField, TorusGrid, VectorField};

/// Random real field with coefficients uniform in the unit square times
/// `(1 + |k|)^{-decay}`; the mean is kept.
pub fn random_field(grid: &TorusGrid, rng: &mut impl Rng, decay: f64) -> SpectralField {
    let mut f = SpectralField::zeros(grid);
    let count = grid.mode_count();
    for i in count / 2..count {
        let k = grid.mode(i);
        let w = (1.0 + grid.mode_norm(i)).powf(-decay);
        let c = if i == count / 2 {
            Complex64::new(rng.gen_range(-0.5..0.5) * w, 0.0)
        } else {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * w
        };
        f.add_real_mode(&k[..grid.dim()], c);
    }
    f
}

pub fn random_mean_free(grid: &TorusGrid, rng: &mut impl Rng, decay: f64) -> SpectralField {
    random_field(grid, rng, decay).remove_mean()
}

/// `sum_{l >= 1, 2^l <= K} 2^{-lr} cos(2^l x_axis)`, exactly of Zygmund
/// regularity r.
pub fn lacunary(grid: &TorusGrid, r: f64, axis: usize) -> SpectralField {
    let mut f = SpectralField::zeros(grid);
    let mut l = 1;
    while (1usize << l) <= grid.k_max() {
        let mut k = vec![0i64; grid.dim()];
        k[axis] = 1 << l;
        f = &f + &SpectralField::cosine(grid, &k, f64::powi(2.0, -(l as i32)).powf(r));
        l += 1;
    }
    f
}

/// Block `j` of a flat random field, scaled to unit sup norm.
pub fn block_probe(cut: &DyadicCutoff, j: usize, rng: &mut impl Rng) -> SpectralField {
    let flat = random_field(cut.grid(), rng, 0.0);
    let b = cut.block(&flat, j);
    let sup = b.sup_norm();
    if sup == 0.0 {
        b
    } else {
        b.scale(1.0 / sup)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// `(x, y)` pairs the line was fitted to.
    pub points: Vec<(f64, f64)>,
}

/// Least-squares line through `points`; `None` with fewer than two distinct
/// abscissae or any non-finite value.
pub fn fit_line(points: &[(f64, f64)]) -> Option<SlopeFit> {
    if points.len() < 2 || points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(SlopeFit {
        slope,
        intercept: my - slope * mx,
        points: points.to_vec(),
    })
}

/// Fits `log2 ratio` against `j`.
pub fn fit_decay(ratios: &[(usize, f64)]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = ratios.iter().map(|&(j, r)| (j as f64, r.log2())).collect();
    fit_line(&pts)
}

/// `||T_a T_b u - T_{ab} u||_{L2} / ||u||_{L2}` for single-block u.
pub fn cm_decay(
    a: &SpectralField,
    b: &SpectralField,
    cut: &DyadicCutoff,
    levels: &[usize],
    rng: &mut impl Rng,
) -> Result<Vec<(usize, f64)>> {
    levels
        .iter()
        .map(|&j| {
            let u = block_probe(cut, j, rng);
            let r = para::cm_remainder(a, b, &u, cut)?;
            Ok((j, r.l2_norm() / u.l2_norm()))
        })
        .collect()
}

/// `(F(x,u), F(x,0), F_z(x,u))` sampled on the grid.
pub fn evaluate_nonlinearity(
    f: &dyn Nonlinearity,
    u: &SpectralField,
) -> Result<(SpectralField, SpectralField, SpectralField)> {
    let grid = u.grid();
    let dim = grid.dim();
    let us = u.samples();
    let mut fu = Vec::with_capacity(us.len());
    let mut f0 = Vec::with_capacity(us.len());
    let mut fz = Vec::with_capacity(us.len());
    for (p, &z) in us.iter().enumerate() {
        let x = grid.sample_point(p);
        fu.push(f.value(p, &x[..dim], z));
        f0.push(f.value(p, &x[..dim], 0.0));
        fz.push(f.dz(p, &x[..dim], z));
    }
    Ok((
        SpectralField::analyze(grid, &fu)?,
        SpectralField::analyze(grid, &f0)?,
        SpectralField::analyze(grid, &fz)?,
    ))
}

/// `F(x,u) - F(x,0) - T_{F_z(x,u)} u` from pointwise evaluation.
pub fn pl_remainder_of(f: &dyn Nonlinearity, u: &SpectralField, cut: &DyadicCutoff) -> Result<SpectralField> {
    let (fu, f0, fz) = evaluate_nonlinearity(f, u)?;
    para::pl_remainder(&fu, &f0, &fz, u, cut)
}

/// Para-linearization remainder ratio `||R||_{L2} / ||u||_{L2}` for the
/// block probe at level j scaled to `|u|_{C^r_*} = 1`.
pub fn pl_decay(
    f: &dyn Nonlinearity,
    r: f64,
    cut: &DyadicCutoff,
    levels: &[usize],
    rng: &mut impl Rng,
) -> Result<Vec<(usize, f64)>> {
    levels
        .iter()
        .map(|&j| {
            let probe = block_probe(cut, j, rng);
            let u = probe.scale(f64::powf(2.0, -(j as f64) * r));
            let rem = pl_remainder_of(f, &u, cut)?;
            Ok((j, rem.l2_norm() / u.l2_norm()))
        })
        .collect()
}

/// Largest `||T_a u||_{H^s} / (|a|_{L^inf} ||u||_{H^s})` over random pairs.
/// Each trial seeds its own generators, so on T^1 the fields of a finer grid
/// extend those of a coarser one.
pub fn boundedness_ratio(grid: &TorusGrid, s: f64, trials: usize, seed: u64) -> Result<f64> {
    let cut = DyadicCutoff::new(grid);
    let mut worst: f64 = 0.0;
    for t in 0..trials as u64 {
        let base = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(2 * t);
        let a = random_field(grid, &mut ChaCha8Rng::seed_from_u64(base), 1.5);
        let u = random_field(grid, &mut ChaCha8Rng::seed_from_u64(base + 1), s + 1.0);
        let tu = para::para_product(&a, &u, &cut)?;
        worst = worst.max(tu.sobolev_norm(s) / (a.sup_norm() * u.sobolev_norm(s)));
    }
    Ok(worst)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub amplitude: f64,
    pub composition: f64,
    pub linearization: f64,
}

/// Remainders of the torus right-hand side for `a0 = eps cos(theta_1)`,
/// `a1 = omega`, `Q = I` and `u - zeta0 = eps w`, with w a fixed smooth
/// displacement on the 2-torus. Norms are L2.
pub fn rhs_remainder_sweep(k_max: usize, amplitudes: &[f64]) -> Result<Vec<SweepPoint>> {
    let grid = TorusGrid::new(2, k_max)?;
    let cut = DyadicCutoff::new(&grid);
    let om = [1.0, 0.5 * (5f64.sqrt() - 1.0)];
    let omega = FrequencyVector::certify(&om, 1.0, k_max)?;
    let w = VectorField::new(vec![
        SpectralField::sine(&grid, &[1, 0], 0.3),
        SpectralField::cosine(&grid, &[0, 1], 0.2),
        SpectralField::cosine(&grid, &[1, 0], 0.5),
        SpectralField::sine(&grid, &[1, 1], 0.4),
    ])?;
    amplitudes
        .iter()
        .map(|&eps| {
            let h = HamiltonianData::new(
                SpectralField::cosine(&grid, &[1, 0], eps),
                VectorField::constant(&grid, &om),
                MatrixField::constant(&grid, &DMatrix::identity(2, 2)),
                None,
            )?;
            let (e0, _) = kam::error_fields(&h, &om)?;
            let u = TorusEmbedding::from_displacement(&w.scale(eps))?;
            let op = ParaHomological::build(&h, &u, &omega, &cut, InvertOptions::default())?;
            let parts = kam::rhs_parts(&op, &h, &u, &om, &e0, &cut)?;
            Ok(SweepPoint {
                amplitude: eps,
                composition: parts.composition.sobolev_norm(0.0),
                linearization: parts.linearization.sobolev_norm(0.0),
            })
        })
        .collect()
}

/// Slope of `log(norm)` against `log(amplitude)`.
pub fn fit_power(points: &[(f64, f64)]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(a, v)| (a.log2(), v.log2())).collect();
    fit_line(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_fields_are_real() {
        let g = TorusGrid::new(2, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_field(&g, &mut rng, 1.0);
        assert_eq!(f.hermitian_defect(), 0.0);
        assert!(random_mean_free(&g, &mut rng, 1.0).mean() == 0.0);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let pts: Vec<_> = (0..5).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        let fit = fit_line(&pts).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-14 && (fit.intercept - 3.0).abs() < 1e-14);
        assert!(fit_line(&[(1.0, 1.0)]).is_none());
        assert!(fit_line(&[(1.0, 1.0), (1.0, 2.0)]).is_none());
    }

    #[test]
    fn lacunary_zygmund_norm_is_one() {
        let g = TorusGrid::new(1, 256).unwrap();
        let cut = DyadicCutoff::new(&g);
        for r in [1.0, 2.0] {
            let a = lacunary(&g, r, 0);
            assert!((cut.zygmund_norm(&a, r) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn block_probe_lives_in_one_block() {
        let g = TorusGrid::new(1, 64).unwrap();
        let cut = DyadicCutoff::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = block_probe(&cut, 4, &mut rng);
        assert!((b.sup_norm() - 1.0).abs() < 1e-12);
        assert!(cut.block(&b, 1).is_zero() && cut.block(&b, 7).is_zero());
    }
}
