//! Para-products `T_a u = sum_j S_{j-3} a . Delta_j u`, their composition
//! remainders, Meyer multiplier operators, the telescoping para-linearization
//! and para-composition.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::littlewood_paley::DyadicCutoff;
use crate::spectral::{MatrixField, SpectralField, TorusGrid, VectorField};

/// Blocks `j <= LOW_BLOCKS` see only the mean of the symbol.
const LOW_BLOCKS: usize = 3;

/// Para-product operator with the symbol's partial sums cached on the grid.
#[derive(Clone, Debug)]
pub struct ParaOp {
    cut: DyadicCutoff,
    mean: f64,
    /// Samples of `S_{j-3} a` for `j > LOW_BLOCKS`, indexed by `j - LOW_BLOCKS - 1`.
    symbols: Vec<Vec<f64>>,
}

impl ParaOp {
    pub fn new(a: &SpectralField, cut: &DyadicCutoff) -> Result<Self> {
        if a.grid() != cut.grid() {
            return Err(Error::GridMismatch);
        }
        let symbols = (LOW_BLOCKS + 1..=cut.j_max())
            .into_par_iter()
            .map(|j| cut.partial_sum(a, j as i64 - 3).samples())
            .collect();
        Ok(ParaOp {
            cut: cut.clone(),
            mean: a.mean(),
            symbols,
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn grid(&self) -> &TorusGrid {
        self.cut.grid()
    }

    pub fn apply(&self, u: &SpectralField) -> Result<SpectralField> {
        if u.grid() != self.grid() {
            return Err(Error::GridMismatch);
        }
        let low = self.cut.partial_sum(u, LOW_BLOCKS as i64).scale(self.mean);
        if self.symbols.is_empty() {
            return Ok(low);
        }
        let blocks = high_block_samples(u, &self.cut);
        let mut acc = vec![0.0; self.grid().sample_count()];
        accumulate(&mut acc, &self.symbols, &blocks);
        Ok(&SpectralField::analyze(self.grid(), &acc)? + &low)
    }
}

/// Samples of `Delta_j u` for the high blocks, `None` where the block vanishes.
fn high_block_samples(u: &SpectralField, cut: &DyadicCutoff) -> Vec<Option<Vec<f64>>> {
    (LOW_BLOCKS + 1..=cut.j_max())
        .into_par_iter()
        .map(|j| {
            let b = cut.block(u, j);
            if b.is_zero() {
                None
            } else {
                Some(b.samples())
            }
        })
        .collect()
}

fn accumulate(acc: &mut [f64], symbols: &[Vec<f64>], blocks: &[Option<Vec<f64>>]) {
    for (sym, b) in symbols.iter().zip(blocks) {
        if let Some(b) = b {
            for ((a, s), v) in acc.iter_mut().zip(sym).zip(b) {
                *a += s * v;
            }
        }
    }
}

/// `T_a u`.
pub fn para_product(a: &SpectralField, u: &SpectralField, cut: &DyadicCutoff) -> Result<SpectralField> {
    if a.grid() != u.grid() {
        return Err(Error::GridMismatch);
    }
    ParaOp::new(a, cut)?.apply(u)
}

/// Blockwise para-product with a matrix symbol.
#[derive(Clone, Debug)]
pub struct MatrixParaOp {
    rows: usize,
    cols: usize,
    cut: DyadicCutoff,
    ops: Vec<ParaOp>,
}

impl MatrixParaOp {
    pub fn new(a: &MatrixField, cut: &DyadicCutoff) -> Result<Self> {
        let ops = a
            .entries()
            .par_iter()
            .map(|e| ParaOp::new(e, cut))
            .collect::<Result<Vec<_>>>()?;
        Ok(MatrixParaOp {
            rows: a.rows(),
            cols: a.cols(),
            cut: cut.clone(),
            ops,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mean(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.ops[i * self.cols + j].mean)
    }

    pub fn apply(&self, v: &VectorField) -> Result<VectorField> {
        if v.len() != self.cols {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} symbol applied to {} components",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        if v.grid() != self.cut.grid() {
            return Err(Error::GridMismatch);
        }
        let grid = self.cut.grid();
        let lows: Vec<SpectralField> = v
            .comps()
            .iter()
            .map(|c| self.cut.partial_sum(c, LOW_BLOCKS as i64))
            .collect();
        let blocks: Vec<Vec<Option<Vec<f64>>>> = v
            .comps()
            .par_iter()
            .map(|c| high_block_samples(c, &self.cut))
            .collect();
        let comps = (0..self.rows)
            .into_par_iter()
            .map(|i| {
                let mut acc = vec![0.0; grid.sample_count()];
                let mut low = SpectralField::zeros(grid);
                for q in 0..self.cols {
                    let op = &self.ops[i * self.cols + q];
                    accumulate(&mut acc, &op.symbols, &blocks[q]);
                    if op.mean != 0.0 {
                        low = &low + &lows[q].scale(op.mean);
                    }
                }
                Ok(&SpectralField::analyze(grid, &acc)? + &low)
            })
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(comps)
    }
}

/// `(T_A v)_i = sum_j T_{A_ij} v_j`.
pub fn para_product_matrix(a: &MatrixField, v: &VectorField, cut: &DyadicCutoff) -> Result<VectorField> {
    MatrixParaOp::new(a, cut)?.apply(v)
}

/// `T_a T_b u - T_{ab} u` as a literal difference.
pub fn cm_remainder(
    a: &SpectralField,
    b: &SpectralField,
    u: &SpectralField,
    cut: &DyadicCutoff,
) -> Result<SpectralField> {
    let tb = para_product(b, u, cut)?;
    let tatb = para_product(a, &tb, cut)?;
    let tab = para_product(&a.product(b)?, u, cut)?;
    Ok(&tatb - &tab)
}

/// Symbols `m_j`, j = 0..=j_max, acting by `sum_j m_j . Delta_j u`.
#[derive(Clone, Debug)]
pub struct MeyerMultiplierFamily {
    pub multipliers: Vec<SpectralField>,
    /// Claimed smoothing order.
    pub target_gain: f64,
}

pub fn meyer_apply(
    fam: &MeyerMultiplierFamily,
    u: &SpectralField,
    cut: &DyadicCutoff,
) -> Result<SpectralField> {
    if fam.multipliers.len() != cut.j_max() + 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} multipliers for {} blocks",
            fam.multipliers.len(),
            cut.j_max() + 1
        )));
    }
    let grid = cut.grid();
    let terms: Vec<Option<Vec<f64>>> = fam
        .multipliers
        .par_iter()
        .enumerate()
        .map(|(j, m)| {
            let b = cut.block(u, j);
            if b.is_zero() || m.is_zero() {
                None
            } else {
                let ms = m.samples();
                Some(ms.iter().zip(b.samples()).map(|(x, y)| x * y).collect())
            }
        })
        .collect();
    let mut acc = vec![0.0; grid.sample_count()];
    for t in terms.into_iter().flatten() {
        for (a, v) in acc.iter_mut().zip(t) {
            *a += v;
        }
    }
    SpectralField::analyze(grid, &acc)
}

/// Pointwise nonlinearity `F(x, z)` evaluated at collocation points.
pub trait Nonlinearity: Sync {
    /// `F(x, z)` at collocation point `p` with coordinates `x`.
    fn value(&self, p: usize, x: &[f64], z: f64) -> f64;
    /// `dF/dz (x, z)`.
    fn dz(&self, p: usize, x: &[f64], z: f64) -> f64;
}

/// `F(x, z) = sum_p c_p(x) z^p`.
#[derive(Clone, Debug)]
pub struct PolynomialInZ {
    coeffs: Vec<Vec<f64>>,
}

impl PolynomialInZ {
    pub fn new(coeffs: &[SpectralField]) -> Self {
        PolynomialInZ {
            coeffs: coeffs.iter().map(|c| c.samples()).collect(),
        }
    }

    /// Constant coefficients on `grid`.
    pub fn constant(grid: &TorusGrid, coeffs: &[f64]) -> Self {
        PolynomialInZ {
            coeffs: coeffs.iter().map(|&c| vec![c; grid.sample_count()]).collect(),
        }
    }
}

impl Nonlinearity for PolynomialInZ {
    fn value(&self, p: usize, _x: &[f64], z: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * z + c[p])
    }

    fn dz(&self, p: usize, _x: &[f64], z: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (q, c)| acc * z + q as f64 * c[p])
    }
}

/// 8-point Gauss-Legendre nodes and weights on [0, 1].
fn gauss_legendre_unit() -> [(f64, f64); 8] {
    const X: [f64; 4] = [
        0.183_434_642_495_649_8,
        0.525_532_409_916_329_0,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_3,
    ];
    const W: [f64; 4] = [
        0.362_683_783_378_362_0,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_5,
        0.101_228_536_290_376_3,
    ];
    let mut out = [(0.0, 0.0); 8];
    for i in 0..4 {
        out[2 * i] = (0.5 * (1.0 - X[i]), 0.5 * W[i]);
        out[2 * i + 1] = (0.5 * (1.0 + X[i]), 0.5 * W[i]);
    }
    out
}

fn eval_on_grid(
    grid: &TorusGrid,
    f: impl Fn(usize, &[f64]) -> f64 + Sync,
) -> Result<Vec<f64>> {
    let dim = grid.dim();
    let vals: Vec<f64> = (0..grid.sample_count())
        .into_par_iter()
        .map(|p| f(p, &grid.sample_point(p)[..dim]))
        .collect();
    if let Some(p) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonEvaluable(format!(
            "non-finite value at collocation point {p}"
        )));
    }
    Ok(vals)
}

/// The two multiplier families of the telescoping para-linearization
/// `F(x,u) - F(x,0) = T_{F_z(x,u)} u + sum_j (m1_j + m2_j) Delta_j u`.
pub fn telescope_remainders(
    f: &dyn Nonlinearity,
    u: &SpectralField,
    cut: &DyadicCutoff,
) -> Result<(MeyerMultiplierFamily, MeyerMultiplierFamily)> {
    let grid = u.grid();
    if grid != cut.grid() {
        return Err(Error::GridMismatch);
    }
    let j_max = cut.j_max();
    let fz0 = SpectralField::analyze(grid, &eval_on_grid(grid, |p, x| f.dz(p, x, 0.0))?)?;
    let fz0_osc = fz0.remove_mean();
    let m1: Vec<SpectralField> = (0..=j_max)
        .map(|j| &fz0_osc - &cut.partial_sum(&fz0_osc, j as i64 - 3))
        .collect();

    let us = u.samples();
    let fzu = eval_on_grid(grid, |p, x| f.dz(p, x, us[p]))?;
    let fz0s = fz0_samples(grid, f)?;
    let diff: Vec<f64> = fzu.iter().zip(&fz0s).map(|(a, b)| a - b).collect();
    let g = SpectralField::analyze(grid, &diff)?;
    let nodes = gauss_legendre_unit();
    let m2 = (0..=j_max)
        .map(|j| {
            let below: Vec<f64> = if j == 0 {
                vec![0.0; grid.sample_count()]
            } else {
                cut.partial_sum(u, j as i64 - 1).samples()
            };
            let block = cut.block(u, j).samples();
            let integral = eval_on_grid(grid, |p, x| {
                let mut acc = 0.0;
                for &(t, w) in &nodes {
                    acc += w * f.dz(p, x, below[p] + t * block[p]);
                }
                acc - fz0s[p]
            })?;
            Ok(&SpectralField::analyze(grid, &integral)? - &cut.partial_sum(&g, j as i64 - 3))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        MeyerMultiplierFamily {
            multipliers: m1,
            target_gain: 0.0,
        },
        MeyerMultiplierFamily {
            multipliers: m2,
            target_gain: 0.0,
        },
    ))
}

fn fz0_samples(grid: &TorusGrid, f: &dyn Nonlinearity) -> Result<Vec<f64>> {
    eval_on_grid(grid, |p, x| f.dz(p, x, 0.0))
}

/// `F(x,u) - F(x,0) - T_{F_z(x,u)} u` from fully evaluated inputs.
pub fn pl_remainder(
    f_of_u: &SpectralField,
    f_of_0: &SpectralField,
    fz_at_u: &SpectralField,
    u: &SpectralField,
    cut: &DyadicCutoff,
) -> Result<SpectralField> {
    let t = para_product(fz_at_u, u, cut)?;
    Ok(&(f_of_u - f_of_0) - &t)
}

/// Max over collocation points of the row-sum norm of the displacement's
/// Jacobian.
pub fn displacement_lipschitz(disp: &VectorField) -> f64 {
    let jac = disp.jacobian();
    let samples: Vec<Vec<f64>> = jac.entries().par_iter().map(|e| e.samples()).collect();
    let (rows, cols) = (jac.rows(), jac.cols());
    (0..disp.grid().sample_count())
        .map(|p| {
            (0..rows)
                .map(|i| (0..cols).map(|j| samples[i * cols + j][p].abs()).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Para-composition `chi* F = sum_j (S_{j+N} - S_{j-N})((Delta_j F) o chi)`
/// for `chi = Id + disp`. The low cutoff `S_{j-N}` is dropped when `j < N`.
pub fn para_compose(
    f: &SpectralField,
    disp: &VectorField,
    cut: &DyadicCutoff,
    window: usize,
) -> Result<SpectralField> {
    let grid = f.grid();
    if disp.grid() != grid || cut.grid() != grid {
        return Err(Error::GridMismatch);
    }
    if disp.len() != grid.dim() {
        return Err(Error::ShapeMismatch(format!(
            "displacement has {} components on a {}-torus",
            disp.len(),
            grid.dim()
        )));
    }
    let lip = displacement_lipschitz(disp);
    if lip >= 1.0 {
        return Err(Error::DisplacementTooLarge(lip));
    }
    let coords = crate::spectral::warped_coordinates(disp);
    let n = window as i64;
    let terms = (0..=cut.j_max())
        .into_par_iter()
        .map(|j| {
            let b = cut.block(f, j);
            if b.is_zero() {
                return Ok(None);
            }
            let composed = SpectralField::analyze(grid, &b.eval_points(&coords))?;
            let j = j as i64;
            let high = cut.partial_sum(&composed, j + n);
            Ok(Some(if j >= n {
                &high - &cut.partial_sum(&composed, j - n)
            } else {
                high
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = SpectralField::zeros(grid);
    for t in terms.into_iter().flatten() {
        acc = &acc + &t;
    }
    Ok(acc)
}

/// `F o chi - chi* F - sum_d T_{(d_d F) o chi} disp_d`, the remainder of
/// para-composition as a literal difference.
pub fn alinhac_remainder(
    f: &SpectralField,
    disp: &VectorField,
    cut: &DyadicCutoff,
    window: usize,
) -> Result<SpectralField> {
    let star = para_compose(f, disp, cut, window)?;
    let comp = f.compose_warped(disp)?;
    let mut acc = &comp - &star;
    for d in 0..f.grid().dim() {
        let sym = f.derivative(d).compose_warped(disp)?;
        acc = &acc - &para_product(&sym, disp.comp(d), cut)?;
    }
    Ok(acc)
}

/// Tolerances for the Neumann iterations inverting para-products.
#[derive(Clone, Copy, Debug)]
pub struct InvertOptions {
    /// Sobolev index of the residual norm.
    pub s: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for InvertOptions {
    fn default() -> Self {
        InvertOptions {
            s: 0.0,
            tol: 1e-12,
            max_iter: 200,
        }
    }
}

/// Iterations without a new best residual before the loop gives up.
const STALL_LIMIT: usize = 5;
/// A stalled iteration is accepted if its best residual is within this
/// factor of the tolerance (roundoff floor of the forward operator).
const FLOOR_FACTOR: f64 = 1e3;

/// `w <- step(w, v - T w)` until the relative residual drops below `tol`.
fn neumann<T: Clone>(
    opts: InvertOptions,
    init: T,
    residual: impl Fn(&T) -> Result<(T, f64)>,
    step: impl Fn(&T, &T) -> T,
) -> Result<T> {
    let mut w = init;
    let mut best = (f64::INFINITY, w.clone());
    let mut since_best = 0;
    for it in 1..=opts.max_iter {
        let (r, rel) = residual(&w)?;
        if rel <= opts.tol {
            return Ok(w);
        }
        if !rel.is_finite() {
            return Err(Error::NonContractive {
                iterations: it,
                residual: rel,
            });
        }
        if rel < best.0 {
            best = (rel, w.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STALL_LIMIT {
                break;
            }
        }
        w = step(&w, &r);
    }
    if best.0 <= FLOOR_FACTOR * opts.tol {
        log::debug!("Neumann iteration stalled at relative residual {:.3e}", best.0);
        return Ok(best.1);
    }
    Err(Error::NonContractive {
        iterations: opts.max_iter,
        residual: best.0,
    })
}

/// Solves `T_a w = v` by `w <- w + mean(a)^{-1} (v - T_a w)`.
pub fn para_invert(
    a: &SpectralField,
    v: &SpectralField,
    cut: &DyadicCutoff,
    opts: InvertOptions,
) -> Result<SpectralField> {
    para_invert_with(&ParaOp::new(a, cut)?, v, opts)
}

pub fn para_invert_with(op: &ParaOp, v: &SpectralField, opts: InvertOptions) -> Result<SpectralField> {
    let m = op.mean();
    let vnorm = v.sobolev_norm(opts.s);
    if vnorm == 0.0 {
        return Ok(SpectralField::zeros(v.grid()));
    }
    if m.abs() < 1e-12 {
        return Err(Error::NonContractive {
            iterations: 0,
            residual: f64::INFINITY,
        });
    }
    neumann(
        opts,
        v.scale(1.0 / m),
        |w| {
            let r = v - &op.apply(w)?;
            let rel = r.sobolev_norm(opts.s) / vnorm;
            Ok((r, rel))
        },
        |w, r| w + &r.scale(1.0 / m),
    )
}

fn apply_constant(m: &DMatrix<f64>, v: &VectorField) -> VectorField {
    let comps = (0..m.nrows())
        .map(|i| {
            let mut acc = SpectralField::zeros(v.grid());
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    acc = &acc + &v.comp(j).scale(m[(i, j)]);
                }
            }
            acc
        })
        .collect();
    VectorField::new(comps).expect("components share the grid")
}

/// Inverse of a constant square matrix, or `SingularAverage`.
pub fn invert_average(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch("average matrix is not square".into()));
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::SingularAverage);
    }
    m.clone().try_inverse().ok_or(Error::SingularAverage)
}

/// Solves `T_A w = v` with the preconditioner `Avg(A)^{-1}`.
pub fn para_invert_matrix(
    a: &MatrixField,
    v: &VectorField,
    cut: &DyadicCutoff,
    opts: InvertOptions,
) -> Result<VectorField> {
    para_invert_matrix_with(&MatrixParaOp::new(a, cut)?, v, opts)
}

pub fn para_invert_matrix_with(
    op: &MatrixParaOp,
    v: &VectorField,
    opts: InvertOptions,
) -> Result<VectorField> {
    if op.rows != op.cols || v.len() != op.cols {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} symbol, {} components",
            op.rows,
            op.cols,
            v.len()
        )));
    }
    let pre = invert_average(&op.mean())?;
    let vnorm = v.sobolev_norm(opts.s);
    if vnorm == 0.0 {
        return Ok(VectorField::zeros(v.grid(), v.len()));
    }
    neumann(
        opts,
        apply_constant(&pre, v),
        |w| {
            let r = v - &op.apply(w)?;
            let rel = r.sobolev_norm(opts.s) / vnorm;
            Ok((r, rel))
        },
        |w, r| w + &apply_constant(&pre, r),
    )
}
