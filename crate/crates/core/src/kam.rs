//! Invariant tori with prescribed frequency omega for
//! `h(x, y) = a0(x) + <a1(x), y> + 1/2 <Q(x) y, y> + 1/6 C(x)[y, y, y]`.
//!
//! The unknown is an embedding `u(theta) = (theta + ux(theta), uy(theta))`
//! solving `X_{h + xi.y}(u) - (omega . d) u = 0`. Around `zeta0(theta) =
//! (theta, 0)` the linearized operator is conjugated by the frame
//! `M[u] = (du | J du N)` to `[[0, S], [0, 0]] - omega . d`, which is inverted
//! mean by mean with para-products in place of products.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::littlewood_paley::DyadicCutoff;
use crate::para::{self, InvertOptions, MatrixParaOp};
use crate::report::{IterationRow, SolveReport, Status};
use crate::small_divisor::{omega_derivative, omega_derivative_vec, omega_directional_inverse, FrequencyVector};
use crate::spectral::{warped_coordinates, MatrixField, PointEvaluator, SpectralField, TorusGrid, VectorField};

const SYMMETRY_TOL: f64 = 1e-12;
/// Smallest admissible eigenvalue of `du^T du`.
const GRAM_FLOOR: f64 = 1e-10;
/// Relative residual allowed when a linear solve re-checks itself.
const SELF_CHECK_TOL: f64 = 1e-9;
/// Energy drift tolerated by the flow oracle.
const ENERGY_DRIFT_TOL: f64 = 1e-6;

/// Taylor data of the Hamiltonian in y, everything on one grid.
#[derive(Clone, Debug)]
pub struct HamiltonianData {
    pub a0: SpectralField,
    pub a1: VectorField,
    pub q: MatrixField,
    /// `cubic[(i * n + j) * n + l]`, symmetric in (i, j, l).
    pub cubic: Option<Vec<SpectralField>>,
}

impl HamiltonianData {
    pub fn new(
        a0: SpectralField,
        a1: VectorField,
        q: MatrixField,
        cubic: Option<Vec<SpectralField>>,
    ) -> Result<Self> {
        let grid = a0.grid().clone();
        let n = grid.dim();
        if a1.len() != n || q.rows() != n || q.cols() != n {
            return Err(Error::ShapeMismatch(format!(
                "a1 has {} components and Q is {}x{} on a {n}-torus",
                a1.len(),
                q.rows(),
                q.cols()
            )));
        }
        if a1.grid() != &grid || q.grid() != &grid {
            return Err(Error::GridMismatch);
        }
        for i in 0..n {
            for j in 0..i {
                let d = (q.entry(i, j) - q.entry(j, i)).sup_norm();
                if d > SYMMETRY_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "Q is not symmetric: |Q_{i}{j} - Q_{j}{i}| = {d:.3e}"
                    )));
                }
            }
        }
        if let Some(c) = &cubic {
            if c.len() != n * n * n {
                return Err(Error::ShapeMismatch(format!(
                    "cubic term has {} entries, expected {}",
                    c.len(),
                    n * n * n
                )));
            }
            if c.iter().any(|e| e.grid() != &grid) {
                return Err(Error::GridMismatch);
            }
            let at = |i: usize, j: usize, l: usize| &c[(i * n + j) * n + l];
            for i in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        let d1 = (at(i, j, l) - at(j, i, l)).sup_norm();
                        let d2 = (at(i, j, l) - at(i, l, j)).sup_norm();
                        if d1.max(d2) > SYMMETRY_TOL {
                            return Err(Error::InvalidParameter(format!(
                                "cubic term is not symmetric at ({i}, {j}, {l})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(HamiltonianData { a0, a1, q, cubic })
    }

    /// `<omega, y> + 1/2 <Q0 y, y>` with constant Q0.
    pub fn integrable(grid: &TorusGrid, omega: &[f64], q0: &DMatrix<f64>) -> Result<Self> {
        Self::new(
            SpectralField::zeros(grid),
            VectorField::constant(grid, omega),
            MatrixField::constant(grid, q0),
            None,
        )
    }

    pub fn dim(&self) -> usize {
        self.a0.grid().dim()
    }

    pub fn grid(&self) -> &TorusGrid {
        self.a0.grid()
    }

    /// `h + <xi, y>`.
    pub fn shifted(&self, xi: &[f64]) -> Self {
        let mut out = self.clone();
        out.a1 = self.a1.add_constants(xi);
        out
    }

    fn field_count(&self) -> usize {
        let n = self.dim();
        if self.cubic.is_some() {
            1 + n + n * n + n * n * n
        } else {
            1 + n + n * n
        }
    }

    fn field(&self, f: usize) -> &SpectralField {
        let n = self.dim();
        if f == 0 {
            &self.a0
        } else if f <= n {
            self.a1.comp(f - 1)
        } else if f <= n + n * n {
            &self.q.entries()[f - 1 - n]
        } else {
            &self.cubic.as_ref().expect("cubic field index")[f - 1 - n - n * n]
        }
    }

    /// `h(x, y)` by direct summation, for spot checks.
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let jets = Jets::new(self, 0);
        let jet = jets.at_point(&jets.evaluators(), x);
        jets.local(&jet).value(0, y)
    }
}

/// x-derivatives up to some order of every Taylor coefficient, stored
/// `fields[f * slots + s]`; slot 0 is the value, `1 + m` is `d_m`,
/// `1 + n + m n + p` is `d_m d_p`. Zero fields are `None`.
struct Jets {
    n: usize,
    slots: usize,
    count: usize,
    cubic: bool,
    fields: Vec<Option<SpectralField>>,
}

fn nonzero(f: SpectralField) -> Option<SpectralField> {
    if f.is_zero() {
        None
    } else {
        Some(f)
    }
}

impl Jets {
    fn new(h: &HamiltonianData, order: usize) -> Self {
        let n = h.dim();
        let slots = match order {
            0 => 1,
            1 => 1 + n,
            _ => 1 + n + n * n,
        };
        let count = h.field_count();
        let per_field: Vec<Vec<Option<SpectralField>>> = (0..count)
            .into_par_iter()
            .map(|f| {
                let base = h.field(f);
                if base.is_zero() {
                    return vec![None; slots];
                }
                let mut out = Vec::with_capacity(slots);
                out.push(Some(base.clone()));
                if order >= 1 {
                    for m in 0..n {
                        out.push(nonzero(base.derivative(m)));
                    }
                }
                if order >= 2 {
                    for m in 0..n {
                        for p in 0..n {
                            out.push(nonzero(base.derivative(m).derivative(p)));
                        }
                    }
                }
                out
            })
            .collect();
        Jets {
            n,
            slots,
            count,
            cubic: h.cubic.is_some(),
            fields: per_field.into_iter().flatten().collect(),
        }
    }

    fn stride(&self) -> usize {
        self.count * self.slots
    }

    /// Jets at the points `coords` (stride n), point-major.
    fn on_points(&self, coords: &[f64]) -> Vec<f64> {
        let points = coords.len() / self.n;
        let stride = self.stride();
        let columns: Vec<Option<Vec<f64>>> = self
            .fields
            .par_iter()
            .map(|f| f.as_ref().map(|f| f.eval_points(coords)))
            .collect();
        let mut out = vec![0.0; points * stride];
        for (c, col) in columns.iter().enumerate() {
            if let Some(col) = col {
                for (p, v) in col.iter().enumerate() {
                    out[p * stride + c] = *v;
                }
            }
        }
        out
    }

    fn evaluators(&self) -> Vec<Option<PointEvaluator>> {
        self.fields.iter().map(|f| f.as_ref().map(|f| f.evaluator())).collect()
    }

    fn at_point(&self, evals: &[Option<PointEvaluator>], x: &[f64]) -> Vec<f64> {
        evals
            .iter()
            .map(|e| e.as_ref().map_or(0.0, |e| e.eval(x)))
            .collect()
    }

    fn local<'a>(&self, jet: &'a [f64]) -> LocalJet<'a> {
        LocalJet {
            n: self.n,
            slots: self.slots,
            cubic: self.cubic,
            jet,
        }
    }
}

/// The Taylor polynomial at one base point x, for one x-derivative slot.
struct LocalJet<'a> {
    n: usize,
    slots: usize,
    cubic: bool,
    jet: &'a [f64],
}

impl LocalJet<'_> {
    fn c(&self, f: usize, s: usize) -> f64 {
        self.jet[f * self.slots + s]
    }

    fn a1(&self, i: usize, s: usize) -> f64 {
        self.c(1 + i, s)
    }

    fn q(&self, i: usize, j: usize, s: usize) -> f64 {
        self.c(1 + self.n + i * self.n + j, s)
    }

    fn cubic(&self, i: usize, j: usize, l: usize, s: usize) -> f64 {
        let n = self.n;
        self.c(1 + n + n * n + (i * n + j) * n + l, s)
    }

    fn value(&self, s: usize, y: &[f64]) -> f64 {
        let n = self.n;
        let mut acc = self.c(0, s);
        for i in 0..n {
            acc += self.a1(i, s) * y[i];
            for j in 0..n {
                acc += 0.5 * self.q(i, j, s) * y[i] * y[j];
                if self.cubic {
                    for l in 0..n {
                        acc += self.cubic(i, j, l, s) * y[i] * y[j] * y[l] / 6.0;
                    }
                }
            }
        }
        acc
    }

    fn grad_y(&self, s: usize, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| {
                let mut acc = self.a1(i, s);
                for j in 0..n {
                    acc += self.q(i, j, s) * y[j];
                    if self.cubic {
                        for l in 0..n {
                            acc += 0.5 * self.cubic(i, j, l, s) * y[j] * y[l];
                        }
                    }
                }
                acc
            })
            .collect()
    }

    fn hess_y(&self, s: usize, y: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| {
            let mut acc = self.q(i, j, s);
            if self.cubic {
                for l in 0..n {
                    acc += self.cubic(i, j, l, s) * y[l];
                }
            }
            acc
        })
    }

    /// `X_h = (grad_y h; -grad_x h)`.
    fn vector_field(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.grad_y(0, y);
        out.extend((0..self.n).map(|m| -self.value(1 + m, y)));
        out
    }

    /// `DX_h = [[D_x grad_y h, D_y grad_y h], [-D_x grad_x h, -D_y grad_x h]]`.
    fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        let hyy = self.hess_y(0, y);
        for m in 0..n {
            let g = self.grad_y(1 + m, y);
            for i in 0..n {
                // d_{x_m} d_{y_i} h
                a[(i, m)] = g[i];
                a[(n + m, n + i)] = -g[i];
            }
            for p in 0..n {
                a[(n + m, p)] = -self.value(1 + n + m * n + p, y);
            }
        }
        a.view_mut((0, n), (n, n)).copy_from(&hyy);
        a
    }
}

/// Embedding `theta -> (theta + ux(theta), uy(theta))`.
#[derive(Clone, Debug)]
pub struct TorusEmbedding {
    pub ux: VectorField,
    pub uy: VectorField,
}

impl TorusEmbedding {
    pub fn new(ux: VectorField, uy: VectorField) -> Result<Self> {
        let n = ux.grid().dim();
        if ux.len() != n || uy.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "embedding components {} and {} on a {n}-torus",
                ux.len(),
                uy.len()
            )));
        }
        if ux.grid() != uy.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(TorusEmbedding { ux, uy })
    }

    /// `theta -> (theta, 0)`.
    pub fn zeta0(grid: &TorusGrid) -> Self {
        let n = grid.dim();
        TorusEmbedding {
            ux: VectorField::zeros(grid, n),
            uy: VectorField::zeros(grid, n),
        }
    }

    /// From `u - zeta0 = (ux; uy)`.
    pub fn from_displacement(w: &VectorField) -> Result<Self> {
        let n = w.grid().dim();
        if w.len() != 2 * n {
            return Err(Error::ShapeMismatch(format!(
                "displacement has {} components, expected {}",
                w.len(),
                2 * n
            )));
        }
        Self::new(w.slice(0, n), w.slice(n, 2 * n))
    }

    pub fn displacement(&self) -> VectorField {
        self.ux.concat(&self.uy)
    }

    pub fn dim(&self) -> usize {
        self.ux.len()
    }

    pub fn grid(&self) -> &TorusGrid {
        self.ux.grid()
    }

    /// `du = (I + d ux; d uy)`, 2n x n.
    pub fn tangent(&self) -> MatrixField {
        let n = self.dim();
        let mut jac = self.displacement().jacobian();
        for i in 0..n {
            let e = jac.entry(i, i).add_constant(1.0);
            jac.set_entry(i, i, e);
        }
        jac
    }

    /// `u(theta)` by direct summation.
    pub fn point(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut z: Vec<f64> = (0..n).map(|i| theta[i] + self.ux.comp(i).eval(theta)).collect();
        z.extend(self.uy.comps().iter().map(|c| c.eval(theta)));
        z
    }

    fn base_points(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        (warped_coordinates(&self.ux), self.uy.samples())
    }
}

/// Jets at the points of `u` and the y-coordinates there.
fn jets_along(jets: &Jets, u: &TorusEmbedding) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (coords, ys) = u.base_points();
    let vals = jets.on_points(&coords);
    let count = u.grid().sample_count();
    let y_pts = (0..count).map(|p| ys.iter().map(|c| c[p]).collect()).collect();
    (vals, y_pts)
}

/// `X_h(u) = (grad_y h; -grad_x h)` along u.
pub fn hamiltonian_vector_field(h: &HamiltonianData, u: &TorusEmbedding) -> Result<VectorField> {
    let n = h.dim();
    if u.dim() != n || u.grid() != h.grid() {
        return Err(Error::GridMismatch);
    }
    let jets = Jets::new(h, 1);
    let (vals, ys) = jets_along(&jets, u);
    let stride = jets.stride();
    let per_point: Vec<Vec<f64>> = ys
        .par_iter()
        .enumerate()
        .map(|(p, y)| jets.local(&vals[p * stride..(p + 1) * stride]).vector_field(y))
        .collect();
    let comps: Vec<Vec<f64>> = (0..2 * n)
        .map(|c| per_point.iter().map(|v| v[c]).collect())
        .collect();
    VectorField::analyze(h.grid(), &comps)
}

fn jacobian_points(h: &HamiltonianData, u: &TorusEmbedding) -> Result<Vec<DMatrix<f64>>> {
    if u.dim() != h.dim() || u.grid() != h.grid() {
        return Err(Error::GridMismatch);
    }
    let jets = Jets::new(h, 2);
    let (vals, ys) = jets_along(&jets, u);
    let stride = jets.stride();
    Ok(ys
        .par_iter()
        .enumerate()
        .map(|(p, y)| jets.local(&vals[p * stride..(p + 1) * stride]).jacobian(y))
        .collect())
}

/// `A[u] = DX_h(u)`, 2n x 2n.
pub fn jacobian_a(h: &HamiltonianData, u: &TorusEmbedding) -> Result<MatrixField> {
    MatrixField::from_point_matrices(h.grid(), &jacobian_points(h, u)?)
}

/// `(omega . d) u = (omega + (omega . d) ux; (omega . d) uy)`.
fn omega_derivative_embedding(u: &TorusEmbedding, omega: &[f64]) -> VectorField {
    let n = u.dim();
    let mut shift = omega.to_vec();
    shift.extend(std::iter::repeat(0.0).take(n));
    omega_derivative_vec(&u.displacement(), omega).add_constants(&shift)
}

/// `e0 = X_h(zeta0) - (omega; 0)` and `e1 = Q - Avg Q`.
pub fn error_fields(h: &HamiltonianData, omega: &[f64]) -> Result<(VectorField, MatrixField)> {
    let zeta0 = TorusEmbedding::zeta0(h.grid());
    let e0 = &hamiltonian_vector_field(h, &zeta0)? - &omega_derivative_embedding(&zeta0, omega);
    let avg = MatrixField::constant(h.grid(), &h.q.mean());
    let e1 = &h.q - &avg;
    Ok((e0, e1))
}

/// `J (X; Y) = (Y; -X)`.
pub fn symplectic_matrix(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// `N = (du^T du)^{-1}`, the frame `M = (du | J du N)` and its inverse, as
/// fields and as point matrices.
#[derive(Clone, Debug)]
pub struct Frame {
    pub gram_inverse: MatrixField,
    pub basis: MatrixField,
    pub basis_inverse: MatrixField,
    tangent_pts: Vec<DMatrix<f64>>,
    gram_inverse_pts: Vec<DMatrix<f64>>,
    basis_pts: Vec<DMatrix<f64>>,
    basis_inverse_pts: Vec<DMatrix<f64>>,
}

impl Frame {
    pub fn tangent_points(&self) -> &[DMatrix<f64>] {
        &self.tangent_pts
    }

    pub fn basis_points(&self) -> &[DMatrix<f64>] {
        &self.basis_pts
    }

    pub fn basis_inverse_points(&self) -> &[DMatrix<f64>] {
        &self.basis_inverse_pts
    }
}

pub fn frame(u: &TorusEmbedding) -> Result<Frame> {
    let n = u.dim();
    let grid = u.grid();
    let j = symplectic_matrix(n);
    let tangent_pts = u.tangent().point_matrices();
    let per_point: Vec<Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)>> = tangent_pts
        .par_iter()
        .map(|du| {
            let gram = du.transpose() * du;
            let low = gram.clone().symmetric_eigenvalues().min();
            if low < GRAM_FLOOR {
                return Err(Error::DegenerateEmbedding(low));
            }
            let ninv = gram.try_inverse().ok_or(Error::DegenerateEmbedding(low))?;
            let mut m = DMatrix::zeros(2 * n, 2 * n);
            m.view_mut((0, 0), (2 * n, n)).copy_from(du);
            m.view_mut((0, n), (2 * n, n)).copy_from(&(&j * du * &ninv));
            let minv = m.clone().try_inverse().ok_or(Error::DegenerateEmbedding(0.0))?;
            Ok((ninv, m, minv))
        })
        .collect();
    let mut gram_inverse_pts = Vec::with_capacity(per_point.len());
    let mut basis_pts = Vec::with_capacity(per_point.len());
    let mut basis_inverse_pts = Vec::with_capacity(per_point.len());
    for r in per_point {
        let (a, b, c) = r?;
        gram_inverse_pts.push(a);
        basis_pts.push(b);
        basis_inverse_pts.push(c);
    }
    Ok(Frame {
        gram_inverse: MatrixField::from_point_matrices(grid, &gram_inverse_pts)?,
        basis: MatrixField::from_point_matrices(grid, &basis_pts)?,
        basis_inverse: MatrixField::from_point_matrices(grid, &basis_inverse_pts)?,
        tangent_pts,
        gram_inverse_pts,
        basis_pts,
        basis_inverse_pts,
    })
}

/// `S = N du^T (A J - J A) du N` at every collocation point.
fn torsion_points(a_pts: &[DMatrix<f64>], fr: &Frame) -> Vec<DMatrix<f64>> {
    let n = fr.tangent_pts[0].ncols();
    let j = symplectic_matrix(n);
    a_pts
        .par_iter()
        .zip(&fr.tangent_pts)
        .zip(&fr.gram_inverse_pts)
        .map(|((a, du), ninv)| {
            let comm = a * &j - &j * a;
            ninv * du.transpose() * comm * du * ninv
        })
        .collect()
}

/// Torsion matrix `S[u]`, n x n.
pub fn torsion_s(h: &HamiltonianData, u: &TorusEmbedding) -> Result<MatrixField> {
    let fr = frame(u)?;
    let a = jacobian_points(h, u)?;
    MatrixField::from_point_matrices(h.grid(), &torsion_points(&a, &fr))
}

fn b_points(e: &VectorField, fr: &Frame) -> Vec<DMatrix<f64>> {
    let n = fr.tangent_pts[0].ncols();
    let j = symplectic_matrix(n);
    let de = e.jacobian().point_matrices();
    de.par_iter()
        .zip(&fr.tangent_pts)
        .zip(&fr.gram_inverse_pts)
        .map(|((de, du), ninv)| {
            let b1 = de.clone();
            let b2 = &j * de * ninv;
            let sym = du.transpose() * de + de.transpose() * du;
            let b3 = -(&j * du * ninv * sym * ninv);
            let mut b = DMatrix::zeros(2 * n, 2 * n);
            b.view_mut((0, 0), (2 * n, n)).copy_from(&b1);
            b.view_mut((0, n), (2 * n, n)).copy_from(&(b2 + b3));
            b
        })
        .collect()
}

/// `B[E] = (dE | J dE N - J du N (du^T dE + dE^T du) N)`, 2n x 2n; only dE
/// enters. With `E = F(h, u)` and u isotropic,
/// `A M - (omega . d) M = M [[0, S], [0, 0]] + B[E]` holds pointwise.
pub fn b_matrices(e: &VectorField, u: &TorusEmbedding) -> Result<MatrixField> {
    if e.len() != 2 * u.dim() {
        return Err(Error::ShapeMismatch(format!(
            "E has {} components, expected {}",
            e.len(),
            2 * u.dim()
        )));
    }
    let fr = frame(u)?;
    MatrixField::from_point_matrices(u.grid(), &b_points(e, &fr))
}

/// How the frequency constraint is met.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// Avg Q invertible; the frequency shift xi is pinned to 0.
    #[serde(alias = "thm1")]
    Twist,
    /// No condition on Q; xi is solved for.
    #[serde(alias = "thm2")]
    Shift,
}

/// Output of one linear para-homological solve.
#[derive(Clone, Debug)]
pub struct LinearSolution {
    pub v: VectorField,
    pub xi: Vec<f64>,
    pub mu: Vec<f64>,
    /// Relative L2 residual of the re-substituted equation.
    pub self_check: f64,
}

/// `v -> T_M [[0, T_S], [0, 0]] T_{M^{-1}} v - T_M (omega . d) T_{M^{-1}} v`
/// at a fixed embedding, with its solution operator.
pub struct ParaHomological {
    n: usize,
    omega: FrequencyVector,
    frame: Frame,
    torsion: MatrixField,
    torsion_pts: Vec<DMatrix<f64>>,
    m_op: MatrixParaOp,
    minv_op: MatrixParaOp,
    s_op: MatrixParaOp,
    avg_m: DMatrix<f64>,
    cut: DyadicCutoff,
    opts: InvertOptions,
}

impl ParaHomological {
    pub fn new(
        u: &TorusEmbedding,
        torsion: &MatrixField,
        omega: &FrequencyVector,
        cut: &DyadicCutoff,
        opts: InvertOptions,
    ) -> Result<Self> {
        let fr = frame(u)?;
        let pts = torsion.point_matrices();
        Self::assemble(fr, torsion.clone(), pts, omega, cut, opts)
    }

    /// Builds the frame and torsion of h along u.
    pub fn build(
        h: &HamiltonianData,
        u: &TorusEmbedding,
        omega: &FrequencyVector,
        cut: &DyadicCutoff,
        opts: InvertOptions,
    ) -> Result<Self> {
        let fr = frame(u)?;
        let a = jacobian_points(h, u)?;
        let pts = torsion_points(&a, &fr);
        let torsion = MatrixField::from_point_matrices(u.grid(), &pts)?;
        Self::assemble(fr, torsion, pts, omega, cut, opts)
    }

    fn assemble(
        frame: Frame,
        torsion: MatrixField,
        torsion_pts: Vec<DMatrix<f64>>,
        omega: &FrequencyVector,
        cut: &DyadicCutoff,
        opts: InvertOptions,
    ) -> Result<Self> {
        let n = torsion.rows();
        if omega.dim() != n {
            return Err(Error::ShapeMismatch(format!(
                "frequency of length {} on a {n}-torus",
                omega.dim()
            )));
        }
        let m_op = MatrixParaOp::new(&frame.basis, cut)?;
        let minv_op = MatrixParaOp::new(&frame.basis_inverse, cut)?;
        let s_op = MatrixParaOp::new(&torsion, cut)?;
        Ok(ParaHomological {
            n,
            omega: omega.clone(),
            avg_m: m_op.mean(),
            frame,
            torsion,
            torsion_pts,
            m_op,
            minv_op,
            s_op,
            cut: cut.clone(),
            opts,
        })
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn torsion(&self) -> &MatrixField {
        &self.torsion
    }

    /// `(T_S w^y; 0)`.
    fn shear(&self, w: &VectorField) -> Result<VectorField> {
        let n = self.n;
        let top = self.s_op.apply(&w.slice(n, 2 * n))?;
        Ok(top.concat(&VectorField::zeros(w.grid(), n)))
    }

    /// Left-hand side of the linear para-homological equation.
    pub fn apply(&self, v: &VectorField, xi: &[f64], mu: &[f64]) -> Result<VectorField> {
        let w = self.minv_op.apply(v)?;
        let inner = &self.shear(&w)? - &omega_derivative_vec(&w, &self.omega.omega);
        let mut c = xi.to_vec();
        c.extend_from_slice(mu);
        Ok(self.m_op.apply(&inner)?.add_constants(&c))
    }

    /// Solves `apply(v, xi, mu) = f` and re-checks the result.
    pub fn solve(&self, f: &VectorField, mode: SolverMode) -> Result<LinearSolution> {
        let n = self.n;
        let grid = f.grid();
        let fnorm = f.sobolev_norm(0.0);
        if fnorm == 0.0 {
            return Ok(LinearSolution {
                v: VectorField::zeros(grid, 2 * n),
                xi: vec![0.0; n],
                mu: vec![0.0; n],
                self_check: 0.0,
            });
        }
        let f1 = para::para_invert_matrix_with(&self.m_op, f, self.opts)?;
        let f1x = f1.slice(0, n);
        let f1y = f1.slice(n, 2 * n);
        let mu1 = f1y.means();
        let inv = |g: &VectorField| -> Result<VectorField> {
            g.try_map(|c| omega_directional_inverse(&c.remove_mean(), &self.omega))
        };
        let (v1, xi1) = match mode {
            SolverMode::Twist => {
                // (0; mu) = Avg(M) (xi1; mu1) fixes xi1
                let p11 = self.avg_m.view((0, 0), (n, n)).into_owned();
                let p12 = self.avg_m.view((0, n), (n, n)).into_owned();
                let xi1 = -para::invert_average(&p11)? * (&p12 * DVector::from_vec(mu1.clone()));
                let z = inv(&f1y)?.scale(-1.0);
                let tz = self.s_op.apply(&z)?;
                let avg_s = self.s_op.mean();
                let avg_s_inv = para::invert_average(&avg_s).map_err(|_| Error::SingularAvgS)?;
                let rhs: Vec<f64> = (0..n)
                    .map(|i| f1x.comp(i).mean() - xi1[i] - tz.comp(i).mean())
                    .collect();
                let c = &avg_s_inv * DVector::from_vec(rhs);
                let v1y = z.add_constants(c.as_slice());
                let tv = self.s_op.apply(&v1y)?;
                let v1x = inv(&(&tv - &f1x))?;
                (v1x.concat(&v1y), xi1.as_slice().to_vec())
            }
            SolverMode::Shift => {
                let v1y = inv(&f1y)?.scale(-1.0);
                let g = &f1x - &self.s_op.apply(&v1y)?;
                let xi1 = g.means();
                let v1x = inv(&g)?.scale(-1.0);
                (v1x.concat(&v1y), xi1)
            }
        };
        let mut p1 = xi1.clone();
        p1.extend_from_slice(&mu1);
        let p = &self.avg_m * DVector::from_vec(p1);
        let mut xi = p.as_slice()[..n].to_vec();
        let mu = p.as_slice()[n..].to_vec();
        if mode == SolverMode::Twist {
            xi = vec![0.0; n];
        }
        // the x-derivative in the self-check amplifies the inversion error,
        // so measure it one derivative higher
        let vopts = InvertOptions {
            s: self.opts.s + 1.0,
            ..self.opts
        };
        let v = para::para_invert_matrix_with(&self.minv_op, &v1, vopts)?;
        let r = &self.apply(&v, &xi, &mu)? - f;
        let self_check = r.sobolev_norm(0.0) / fnorm;
        if self_check > SELF_CHECK_TOL {
            return Err(Error::SelfCheckFailed {
                residual: self_check,
                bound: SELF_CHECK_TOL,
            });
        }
        Ok(LinearSolution { v, xi, mu, self_check })
    }

    /// `R_CM[u] w`: the four operator expressions applied to w.
    pub fn composition_remainder(&self, w: &VectorField) -> Result<VectorField> {
        let n = self.n;
        let grid = w.grid();
        let shear = DMatrix::zeros(2 * n, 2 * n);
        let full_pts: Vec<DMatrix<f64>> = self
            .frame
            .basis_pts
            .iter()
            .zip(&self.frame.basis_inverse_pts)
            .zip(&self.torsion_pts)
            .map(|((m, minv), s)| {
                let mut sh = shear.clone();
                sh.view_mut((0, n), (n, n)).copy_from(s);
                m * sh * minv
            })
            .collect();
        let full = MatrixField::from_point_matrices(grid, &full_pts)?;
        let dminv = self.frame.basis_inverse.map(|e| omega_derivative(e, &self.omega.omega));
        let drift = self.frame.basis.mul(&dminv)?;
        let t1 = para::para_product_matrix(&full, w, &self.cut)?;
        let t3 = para::para_product_matrix(&drift, w, &self.cut)?;
        let t4 = omega_derivative_vec(w, &self.omega.omega);
        // T_M S_T T_{M^{-1}} w - T_M (omega . d) T_{M^{-1}} w
        let lhs = self.apply(w, &vec![0.0; n], &vec![0.0; n])?;
        Ok(&(&(&t1 - &lhs) - &t3) - &t4)
    }
}

/// Linear para-homological solve at u with torsion S.
pub fn linear_para_homological_solve(
    u: &TorusEmbedding,
    s: &MatrixField,
    f: &VectorField,
    mode: SolverMode,
    omega: &FrequencyVector,
    cut: &DyadicCutoff,
) -> Result<(VectorField, Vec<f64>, Vec<f64>)> {
    let op = ParaHomological::new(u, s, omega, cut, InvertOptions::default())?;
    let sol = op.solve(f, mode)?;
    Ok((sol.v, sol.xi, sol.mu))
}

/// The right-hand side of the para-homological equation with its two
/// remainder terms.
#[derive(Clone, Debug)]
pub struct RhsParts {
    pub rhs: VectorField,
    pub composition: VectorField,
    pub linearization: VectorField,
}

pub fn rhs_parts(
    op: &ParaHomological,
    h: &HamiltonianData,
    u: &TorusEmbedding,
    omega: &[f64],
    e0: &VectorField,
    cut: &DyadicCutoff,
) -> Result<RhsParts> {
    let n = u.dim();
    let w = u.displacement();
    let mut base = omega.to_vec();
    base.extend(std::iter::repeat(0.0).take(n));
    // X_h(zeta0) = e0 + (omega; 0)
    let x0 = e0.add_constants(&base);
    let a = MatrixField::from_point_matrices(u.grid(), &jacobian_points(h, u)?)?;
    let ta = para::para_product_matrix(&a, &w, cut)?;
    let linearization = &(&hamiltonian_vector_field(h, u)? - &x0) - &ta;
    let composition = op.composition_remainder(&w)?;
    let rhs = &(&(-e0) - &composition) - &linearization;
    Ok(RhsParts {
        rhs,
        composition,
        linearization,
    })
}

/// `-e0 - R_CM[u](u - zeta0) - R_PL(u - zeta0)`.
pub fn assemble_rhs(
    u: &TorusEmbedding,
    h: &HamiltonianData,
    omega: &FrequencyVector,
    e0: &VectorField,
    cut: &DyadicCutoff,
) -> Result<VectorField> {
    let op = ParaHomological::build(h, u, omega, cut, InvertOptions::default())?;
    Ok(rhs_parts(&op, h, u, &omega.omega, e0, cut)?.rhs)
}

#[derive(Clone, Debug)]
pub struct TorusProblem {
    pub h: HamiltonianData,
    pub omega: FrequencyVector,
    pub mode: SolverMode,
    pub s: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub inner: InvertOptions,
}

impl TorusProblem {
    pub fn new(h: HamiltonianData, omega: FrequencyVector, mode: SolverMode, s: f64) -> Self {
        TorusProblem {
            h,
            omega,
            mode,
            s,
            tol: 1e-10,
            max_iter: 50,
            inner: InvertOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct KamSolution {
    pub u: TorusEmbedding,
    pub xi: Vec<f64>,
    pub mu: Vec<f64>,
    pub report: SolveReport,
}

/// `F(h_xi, u) = X_{h + xi.y}(u) - (omega . d) u` with its sup and H^s norms.
pub fn residual_torus(
    h: &HamiltonianData,
    u: &TorusEmbedding,
    xi: &[f64],
    omega: &[f64],
    s: f64,
) -> Result<(VectorField, f64, f64)> {
    let f = &hamiltonian_vector_field(&h.shifted(xi), u)? - &omega_derivative_embedding(u, omega);
    let sup = f.sup_norm();
    let hs = f.sobolev_norm(s);
    Ok((f, sup, hs))
}

/// Grid average of the pointwise product of two fields.
fn product_mean(a: &SpectralField, b: &SpectralField) -> f64 {
    let sa = a.samples();
    let sb = b.samples();
    sa.iter().zip(&sb).map(|(x, y)| x * y).sum::<f64>() / sa.len() as f64
}

/// `|mu - Avg((d uy)^T F^x - (d ux)^T (F^y - mu))|` with `F = F(h_xi, u)`,
/// maximum over components.
pub fn counterterm_check(
    h: &HamiltonianData,
    u: &TorusEmbedding,
    xi: &[f64],
    mu: &[f64],
    omega: &[f64],
) -> Result<f64> {
    let n = u.dim();
    let (f, _, _) = residual_torus(h, u, xi, omega, 0.0)?;
    let tan = u.tangent();
    let mut defect: f64 = 0.0;
    for j in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            // (d uy)^T_{j i} = d_j uy_i, (d ux)^T_{j i} = delta_ij + d_j ux_i
            acc += product_mean(tan.entry(n + i, j), f.comp(i));
            acc -= product_mean(tan.entry(i, j), &f.comp(n + i).add_constant(-mu[i]));
        }
        defect = defect.max((mu[j] - acc).abs());
    }
    Ok(defect)
}

/// Neumann certificate `||T_{B[E] M^{-1}} (u - zeta0)||_{H^s} / ||E||_{H^s}`
/// for `E = F(h_xi, u) + (0; mu)`; 0 when E vanishes.
pub fn neumann_certificate(
    h: &HamiltonianData,
    u: &TorusEmbedding,
    xi: &[f64],
    mu: &[f64],
    omega: &[f64],
    s: f64,
    cut: &DyadicCutoff,
) -> Result<f64> {
    let n = u.dim();
    let (f, _, _) = residual_torus(h, u, xi, omega, s)?;
    let mut shift = vec![0.0; n];
    shift.extend_from_slice(mu);
    let e = f.add_constants(&shift);
    let ehs = e.sobolev_norm(s);
    if ehs == 0.0 {
        return Ok(0.0);
    }
    let fr = frame(u)?;
    let pts: Vec<DMatrix<f64>> = b_points(&e, &fr)
        .iter()
        .zip(&fr.basis_inverse_pts)
        .map(|(b, minv)| b * minv)
        .collect();
    let sym = MatrixField::from_point_matrices(u.grid(), &pts)?;
    let t = para::para_product_matrix(&sym, &u.displacement(), cut)?;
    Ok(t.sobolev_norm(s) / ehs)
}

/// Picard iteration `u <- zeta0 + solve(rhs(u))` from `u = zeta0`.
pub fn solve_torus(problem: &TorusProblem) -> Result<KamSolution> {
    let start = Instant::now();
    let h = &problem.h;
    let n = h.dim();
    let grid = h.grid();
    let omega = &problem.omega;
    if omega.dim() != n {
        return Err(Error::ShapeMismatch(format!(
            "frequency of length {} on a {n}-torus",
            omega.dim()
        )));
    }
    if problem.mode == SolverMode::Twist {
        para::invert_average(&h.q.mean()).map_err(|_| Error::SingularAvgQ)?;
    }
    let cut = DyadicCutoff::new(grid);
    let (e0, e1) = error_fields(h, &omega.omega)?;
    let mut report = SolveReport::new();
    let zeta0 = TorusEmbedding::zeta0(grid);

    if e0.comps().iter().all(|c| c.is_zero()) && e1.entries().iter().all(|c| c.is_zero()) {
        let (_, sup, hs) = residual_torus(h, &zeta0, &vec![0.0; n], &omega.omega, problem.s)?;
        report.push(IterationRow {
            iter: 1,
            increment_hs: 0.0,
            residual_sup: sup,
            residual_hs: hs,
            params: vec![0.0; 2 * n],
            kappa: 0.0,
        });
        report.status = Status::ShortCircuit;
        report.wall_time_s = start.elapsed().as_secs_f64();
        return Ok(KamSolution {
            u: zeta0,
            xi: vec![0.0; n],
            mu: vec![0.0; n],
            report,
        });
    }

    let mut u = zeta0.clone();
    let mut xi = vec![0.0; n];
    let mut mu = vec![0.0; n];
    for iter in 1..=problem.max_iter {
        let op = ParaHomological::build(h, &u, omega, &cut, problem.inner)?;
        let parts = rhs_parts(&op, h, &u, &omega.omega, &e0, &cut)?;
        let sol = op.solve(&parts.rhs, problem.mode)?;
        let increment = (&sol.v - &u.displacement()).sobolev_norm(problem.s);
        u = TorusEmbedding::from_displacement(&sol.v)?;
        xi = sol.xi;
        mu = sol.mu;
        let (f, _, _) = residual_torus(h, &u, &xi, &omega.omega, problem.s)?;
        let mut shift = vec![0.0; n];
        shift.extend_from_slice(&mu);
        let e = f.add_constants(&shift);
        let sup = e.sup_norm();
        let mut params = xi.clone();
        params.extend_from_slice(&mu);
        report.push(IterationRow {
            iter,
            increment_hs: increment,
            residual_sup: sup,
            residual_hs: e.sobolev_norm(problem.s),
            params,
            kappa: 0.0,
        });
        log::debug!("torus iteration {iter}: increment {increment:.3e}, residual {sup:.3e}");
        if increment < problem.tol || sup < problem.tol / 10.0 {
            report.status = Status::Converged;
            break;
        }
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    if report.status != Status::Converged {
        return Err(Error::MaxIterExceeded(Box::new(report)));
    }
    let (_, sup, _) = residual_torus(h, &u, &xi, &omega.omega, problem.s)?;
    let w_hs = u.displacement().sobolev_norm(problem.s);
    let e0_hs = e0.sobolev_norm(problem.s + 2.0 * omega.sigma);
    let kappa = neumann_certificate(h, &u, &xi, &mu, &omega.omega, problem.s, &cut)?;
    let defect = counterterm_check(h, &u, &xi, &mu, &omega.omega)?;
    let mu_norm = mu.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    report.extra.insert("certificate_kappa".into(), kappa);
    report.extra.insert("invariance_residual_sup".into(), sup);
    report.extra.insert("counterterm_defect".into(), defect);
    report.extra.insert("mu_max".into(), mu_norm);
    report.extra.insert("displacement_hs".into(), w_hs);
    if e0_hs > 0.0 {
        report
            .extra
            .insert("bound_ratio".into(), w_hs / (omega.gamma * omega.gamma * e0_hs));
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(KamSolution { u, xi, mu, report })
}

/// Integrates `z' = X_{h_xi}(z)` by RK4 from `u(theta0)` and returns
/// `max_t |z(t) - u(theta0 + omega t)|` over `[0, t_final]`.
pub fn flow_oracle(
    h: &HamiltonianData,
    u: &TorusEmbedding,
    xi: &[f64],
    omega: &[f64],
    theta0: &[f64],
    t_final: f64,
    dt: f64,
) -> Result<f64> {
    let n = h.dim();
    if !(dt > 0.0 && t_final >= 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {dt}, T = {t_final}")));
    }
    let hx = h.shifted(xi);
    let jets = Jets::new(&hx, 1);
    let evals = jets.evaluators();
    let field = |z: &[f64]| -> Vec<f64> {
        let jet = jets.at_point(&evals, &z[..n]);
        jets.local(&jet).vector_field(&z[n..])
    };
    let energy = |z: &[f64]| -> f64 {
        let jet = jets.at_point(&evals, &z[..n]);
        jets.local(&jet).value(0, &z[n..])
    };
    let ux: Vec<PointEvaluator> = u.ux.comps().iter().map(|c| c.evaluator()).collect();
    let uy: Vec<PointEvaluator> = u.uy.comps().iter().map(|c| c.evaluator()).collect();
    let on_torus = |theta: &[f64]| -> Vec<f64> {
        let mut z: Vec<f64> = (0..n).map(|i| theta[i] + ux[i].eval(theta)).collect();
        z.extend(uy.iter().map(|e| e.eval(theta)));
        z
    };
    let axpy = |z: &[f64], k: &[f64], a: f64| -> Vec<f64> { z.iter().zip(k).map(|(x, y)| x + a * y).collect() };

    let mut z = on_torus(theta0);
    let e_start = energy(&z);
    let steps = (t_final / dt).round() as usize;
    let mut worst: f64 = 0.0;
    for step in 1..=steps {
        let k1 = field(&z);
        let k2 = field(&axpy(&z, &k1, dt / 2.0));
        let k3 = field(&axpy(&z, &k2, dt / 2.0));
        let k4 = field(&axpy(&z, &k3, dt));
        for c in 0..2 * n {
            z[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        let drift = (energy(&z) - e_start).abs();
        if drift > ENERGY_DRIFT_TOL {
            return Err(Error::StepRejected(drift));
        }
        let t = step as f64 * dt;
        let theta: Vec<f64> = (0..n).map(|i| theta0[i] + omega[i] * t).collect();
        let target = on_torus(&theta);
        let dev = z.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
    }
    Ok(worst)
}

/// `L[zeta] = (d zeta)^T J d zeta`, antisymmetric n x n.
pub fn lack_of_isotropy(zeta: &TorusEmbedding) -> Result<MatrixField> {
    let n = zeta.dim();
    let j = symplectic_matrix(n);
    let pts: Vec<DMatrix<f64>> = zeta
        .tangent()
        .point_matrices()
        .par_iter()
        .map(|du| du.transpose() * &j * du)
        .collect();
    MatrixField::from_point_matrices(zeta.grid(), &pts)
}

/// `L_kj = d_k W_j - d_j W_k` with `W = (omega . d)^{-1} A[(d zeta)^T J F(h, zeta)]`.
pub fn lack_of_isotropy_from_residual(
    zeta: &TorusEmbedding,
    h: &HamiltonianData,
    omega: &FrequencyVector,
) -> Result<MatrixField> {
    let n = zeta.dim();
    let (f, _, _) = residual_torus(h, zeta, &vec![0.0; n], &omega.omega, 0.0)?;
    let j = symplectic_matrix(n);
    let tan = zeta.tangent().point_matrices();
    let fs = f.samples();
    let p_pts: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            tan.par_iter()
                .enumerate()
                .map(|(p, du)| {
                    let fv = DVector::from_fn(2 * n, |c, _| fs[c][p]);
                    (du.transpose() * &j * fv)[k]
                })
                .collect()
        })
        .collect();
    let pvec = VectorField::analyze(zeta.grid(), &p_pts)?;
    let w = pvec.try_map(|c| omega_directional_inverse(&c.remove_mean(), omega))?;
    let mut entries = Vec::with_capacity(n * n);
    for k in 0..n {
        for jj in 0..n {
            entries.push(&w.comp(jj).derivative(k) - &w.comp(k).derivative(jj));
        }
    }
    MatrixField::new(n, n, entries)
}

fn inverse_laplacian(f: &SpectralField) -> SpectralField {
    f.map_modes(|k, c| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 == 0.0 {
            c * 0.0
        } else {
            -c / k2
        }
    })
}

/// `eta = (zeta^x, zeta^y - (d zeta^x)^T p)` with `p = Laplacian^{-1} div L`.
pub fn isotropic_correction(
    zeta: &TorusEmbedding,
    h: &HamiltonianData,
    omega: &FrequencyVector,
) -> Result<TorusEmbedding> {
    let n = zeta.dim();
    let l = lack_of_isotropy_from_residual(zeta, h, omega)?;
    let p: Vec<SpectralField> = (0..n)
        .map(|k| {
            let mut div = SpectralField::zeros(zeta.grid());
            for jj in 0..n {
                div = &div + &l.entry(k, jj).derivative(jj);
            }
            inverse_laplacian(&div)
        })
        .collect();
    let p = VectorField::new(p)?;
    let tan_x = zeta.tangent().block(0, n, 0, n);
    let corr = tan_x.transpose().mul_vector(&p)?;
    TorusEmbedding::new(zeta.ux.clone(), &zeta.uy - &corr)
}
