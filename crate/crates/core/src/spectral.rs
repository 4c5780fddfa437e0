//! Truncated Fourier series of real fields on the torus T^n, n <= 3.
//!
//! Coefficients follow `u(x) = sum_k c(k) e^{i k.x}` over the retained box
//! `|k_i| <= K`. Nonlinear operations go through samples on an `N^n`
//! collocation grid with `N >= 4K`, so products of two retained fields alias
//! nothing back into the retained box.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer frequency, unused trailing slots are zero.
pub type Mode = [i64; 3];

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

struct GridInner {
    dim: usize,
    k_max: usize,
    points: usize,
    modes: Vec<Mode>,
    /// Position of each retained mode in the wrapped N^n frequency array.
    mode_slot: Vec<usize>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Retained mode box together with its collocation grid and cached FFT plans.
#[derive(Clone)]
pub struct TorusGrid(Arc<GridInner>);

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("dim", &self.0.dim)
            .field("k_max", &self.0.k_max)
            .field("points", &self.0.points)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.dim == other.0.dim
                && self.0.k_max == other.0.k_max
                && self.0.points == other.0.points)
    }
}

impl TorusGrid {
    /// Grid with the default collocation size N = 4K.
    pub fn new(dim: usize, k_max: usize) -> Result<Self> {
        Self::with_points(dim, k_max, 4 * k_max)
    }

    pub fn with_points(dim: usize, k_max: usize, points: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if k_max == 0 {
            return Err(Error::InvalidGrid("K must be positive".into()));
        }
        if points < 4 * k_max {
            return Err(Error::InvalidGrid(format!(
                "N = {points} is below the dealiasing size 4K = {}",
                4 * k_max
            )));
        }
        let side = 2 * k_max + 1;
        let count = side.pow(dim as u32);
        let mut modes = Vec::with_capacity(count);
        let mut mode_slot = Vec::with_capacity(count);
        for idx in 0..count {
            let mut k = [0i64; 3];
            let mut rem = idx;
            let mut slot = 0usize;
            let mut stride = 1usize;
            for d in (0..dim).rev() {
                let c = (rem % side) as i64 - k_max as i64;
                rem /= side;
                k[d] = c;
                let wrapped = if c < 0 { (c + points as i64) as usize } else { c as usize };
                slot += wrapped * stride;
                stride *= points;
            }
            modes.push(k);
            mode_slot.push(slot);
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(points);
        let inv = planner.plan_fft_inverse(points);
        Ok(TorusGrid(Arc::new(GridInner {
            dim,
            k_max,
            points,
            modes,
            mode_slot,
            fwd,
            inv,
        })))
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    /// Largest retained |k_i|.
    pub fn k_max(&self) -> usize {
        self.0.k_max
    }

    /// Collocation points per dimension.
    pub fn points(&self) -> usize {
        self.0.points
    }

    pub fn mode_count(&self) -> usize {
        self.0.modes.len()
    }

    pub fn sample_count(&self) -> usize {
        self.0.points.pow(self.0.dim as u32)
    }

    pub fn modes(&self) -> &[Mode] {
        &self.0.modes
    }

    pub fn mode(&self, idx: usize) -> Mode {
        self.0.modes[idx]
    }

    /// Index of mode `k` in the coefficient vector, `None` outside the box.
    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        let kk = self.0.k_max as i64;
        let side = 2 * kk + 1;
        let mut idx = 0i64;
        for d in 0..self.0.dim {
            let c = k.get(d).copied().unwrap_or(0);
            if c.abs() > kk {
                return None;
            }
            idx = idx * side + (c + kk);
        }
        if k.iter().skip(self.0.dim).any(|&c| c != 0) {
            return None;
        }
        Some(idx as usize)
    }

    /// Index of -k for the mode at `idx`.
    pub fn conjugate_index(&self, idx: usize) -> usize {
        self.mode_count() - 1 - idx
    }

    pub fn mode_norm(&self, idx: usize) -> f64 {
        let k = self.0.modes[idx];
        ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt()
    }

    /// Coordinates of collocation point `idx`; the last axis varies fastest.
    pub fn sample_point(&self, idx: usize) -> [f64; 3] {
        let n = self.0.points;
        let h = 2.0 * PI / n as f64;
        let mut x = [0.0; 3];
        let mut rem = idx;
        for d in (0..self.0.dim).rev() {
            x[d] = (rem % n) as f64 * h;
            rem /= n;
        }
        x
    }

    /// All collocation points, flattened with stride `dim`.
    pub fn sample_coordinates(&self) -> Vec<f64> {
        let dim = self.0.dim;
        let mut out = Vec::with_capacity(self.sample_count() * dim);
        for i in 0..self.sample_count() {
            let x = self.sample_point(i);
            out.extend_from_slice(&x[..dim]);
        }
        out
    }

    /// In-place n-dimensional FFT over the N^n array (unnormalized).
    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let g = &self.0;
        let fft = if inverse { &g.inv } else { &g.fwd };
        let n = g.points;
        let mut scratch = vec![ZERO; fft.get_inplace_scratch_len()];
        // last axis is contiguous
        fft.process_with_scratch(buf, &mut scratch);
        let total = buf.len();
        let mut stride = n;
        for _ in 1..g.dim {
            let block = stride * n;
            let mut lines = vec![ZERO; block];
            for start in (0..total).step_by(block) {
                let chunk = &mut buf[start..start + block];
                for o in 0..stride {
                    for i in 0..n {
                        lines[o * n + i] = chunk[o + i * stride];
                    }
                }
                fft.process_with_scratch(&mut lines, &mut scratch);
                for o in 0..stride {
                    for i in 0..n {
                        chunk[o + i * stride] = lines[o * n + i];
                    }
                }
            }
            stride = block;
        }
    }
}

/// JSON entry `{"k": [...], "re": .., "im": ..}` for one Fourier coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffEntry {
    pub k: Vec<i64>,
    pub re: f64,
    pub im: f64,
}

/// Serialized field: only modes with |c(k)| > 1e-16 are stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDocument {
    pub dim: usize,
    #[serde(rename = "K")]
    pub k_max: usize,
    pub coeffs: Vec<CoeffEntry>,
}

const STORE_THRESHOLD: f64 = 1e-16;
const HERMITIAN_READ_TOL: f64 = 1e-10;

/// Real scalar field given by its retained Fourier coefficients.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: TorusGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: &TorusGrid) -> Self {
        SpectralField {
            grid: grid.clone(),
            coeffs: vec![ZERO; grid.mode_count()],
        }
    }

    pub fn constant(grid: &TorusGrid, c: f64) -> Self {
        let mut f = Self::zeros(grid);
        let zero = grid.index_of(&[0, 0, 0]).unwrap();
        f.coeffs[zero] = Complex64::new(c, 0.0);
        f
    }

    pub fn from_coeffs(grid: &TorusGrid, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.mode_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for {} modes",
                coeffs.len(),
                grid.mode_count()
            )));
        }
        Ok(SpectralField {
            grid: grid.clone(),
            coeffs,
        })
    }

    /// `amp * cos(k.x)`.
    pub fn cosine(grid: &TorusGrid, k: &[i64], amp: f64) -> Self {
        let mut f = Self::zeros(grid);
        f.add_real_mode(k, Complex64::new(0.5 * amp, 0.0));
        f
    }

    /// `amp * sin(k.x)`.
    pub fn sine(grid: &TorusGrid, k: &[i64], amp: f64) -> Self {
        let mut f = Self::zeros(grid);
        f.add_real_mode(k, Complex64::new(0.0, -0.5 * amp));
        f
    }

    /// Adds `2 Re(c e^{ik.x})`, i.e. c at k and conj(c) at -k. Modes outside
    /// the box are dropped.
    pub fn add_real_mode(&mut self, k: &[i64], c: Complex64) {
        if let Some(i) = self.grid.index_of(k) {
            let j = self.grid.conjugate_index(i);
            if i == j {
                self.coeffs[i] += Complex64::new(2.0 * c.re, 0.0);
            } else {
                self.coeffs[i] += c;
                self.coeffs[j] += c.conj();
            }
        }
    }

    /// Builds a field from explicit coefficients, restoring Hermitian
    /// symmetry; rejects entries whose partner disagrees by more than 1e-10.
    pub fn from_entries(grid: &TorusGrid, entries: &[CoeffEntry]) -> Result<Self> {
        let dim = grid.dim();
        let mut coeffs = vec![ZERO; grid.mode_count()];
        let mut seen = vec![false; grid.mode_count()];
        for e in entries {
            if e.k.len() != dim {
                return Err(Error::FieldFormat(format!(
                    "mode {:?} has {} components, expected {dim}",
                    e.k,
                    e.k.len()
                )));
            }
            if !e.re.is_finite() || !e.im.is_finite() {
                return Err(Error::FieldFormat(format!("non-finite coefficient at {:?}", e.k)));
            }
            let i = grid.index_of(&e.k).ok_or_else(|| {
                Error::FieldFormat(format!("mode {:?} outside |k_i| <= {}", e.k, grid.k_max()))
            })?;
            if seen[i] {
                return Err(Error::FieldFormat(format!("duplicate mode {:?}", e.k)));
            }
            seen[i] = true;
            coeffs[i] = Complex64::new(e.re, e.im);
        }
        let mut restored = coeffs.clone();
        for i in 0..coeffs.len() {
            let j = grid.conjugate_index(i);
            let defect = (coeffs[i] - coeffs[j].conj()).norm();
            if defect > HERMITIAN_READ_TOL {
                let k = grid.mode(i);
                return Err(Error::FieldFormat(format!(
                    "Hermitian symmetry violated at k = {:?} by {defect:.3e}",
                    &k[..dim]
                )));
            }
            restored[i] = (coeffs[i] + coeffs[j].conj()) * 0.5;
        }
        Self::from_coeffs(grid, restored)
    }

    pub fn to_entries(&self) -> Vec<CoeffEntry> {
        let dim = self.grid.dim();
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > STORE_THRESHOLD)
            .map(|(i, c)| CoeffEntry {
                k: self.grid.mode(i)[..dim].to_vec(),
                re: c.re,
                im: c.im,
            })
            .collect()
    }

    pub fn to_document(&self) -> FieldDocument {
        FieldDocument {
            dim: self.grid.dim(),
            k_max: self.grid.k_max(),
            coeffs: self.to_entries(),
        }
    }

    /// Reads a document onto the default grid for its (dim, K).
    pub fn from_document(doc: &FieldDocument) -> Result<Self> {
        let grid = TorusGrid::new(doc.dim, doc.k_max)?;
        Self::from_document_on(doc, &grid)
    }

    pub fn from_document_on(doc: &FieldDocument, grid: &TorusGrid) -> Result<Self> {
        if doc.dim != grid.dim() || doc.k_max != grid.k_max() {
            return Err(Error::GridMismatch);
        }
        Self::from_entries(grid, &doc.coeffs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("field serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FieldDocument =
            serde_json::from_str(text).map_err(|e| Error::FieldFormat(e.to_string()))?;
        Self::from_document(&doc)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient of mode k, zero outside the retained box.
    pub fn coeff(&self, k: &[i64]) -> Complex64 {
        self.grid.index_of(k).map_or(ZERO, |i| self.coeffs[i])
    }

    fn check_grid(&self, other: &SpectralField) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Applies a real Fourier multiplier.
    pub fn multiply_modes(&self, symbol: impl Fn(&Mode) -> f64) -> Self {
        let modes = self.grid.modes();
        let coeffs = self
            .coeffs
            .iter()
            .zip(modes)
            .map(|(c, k)| c * symbol(k))
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// Applies a complex Fourier multiplier.
    pub fn map_modes(&self, symbol: impl Fn(&Mode, Complex64) -> Complex64) -> Self {
        let modes = self.grid.modes();
        let coeffs = self
            .coeffs
            .iter()
            .zip(modes)
            .map(|(c, k)| symbol(k, *c))
            .collect();
        SpectralField {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    /// Forward transform of collocation samples, truncated to the box.
    pub fn analyze(grid: &TorusGrid, samples: &[f64]) -> Result<Self> {
        Self::analyze_with_tail(grid, samples).map(|(f, _)| f)
    }

    /// As [`analyze`](Self::analyze), also returning the energy
    /// `sum |c(k)|^2` of the discarded modes.
    pub fn analyze_with_tail(grid: &TorusGrid, samples: &[f64]) -> Result<(Self, f64)> {
        let total = grid.sample_count();
        if samples.len() != total {
            return Err(Error::SampleCountMismatch {
                expected: total,
                got: samples.len(),
            });
        }
        let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        grid.transform(&mut buf, false);
        let scale = 1.0 / total as f64;
        let full_energy: f64 = buf.iter().map(|c| c.norm_sqr()).sum::<f64>() * scale * scale;
        let raw: Vec<Complex64> = grid.0.mode_slot.iter().map(|&s| buf[s] * scale).collect();
        // the transform leaves c(-k) and conj c(k) apart by roundoff; keep the field real
        let coeffs: Vec<Complex64> = (0..raw.len())
            .map(|i| 0.5 * (raw[i] + raw[grid.conjugate_index(i)].conj()))
            .collect();
        let kept: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        let field = SpectralField {
            grid: grid.clone(),
            coeffs,
        };
        Ok((field, (full_energy - kept).max(0.0)))
    }

    /// Samples the function `f(x)` on the collocation grid and analyzes.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let dim = grid.dim();
        let samples: Vec<f64> = (0..grid.sample_count())
            .into_par_iter()
            .map(|i| f(&grid.sample_point(i)[..dim]))
            .collect();
        Self::analyze(grid, &samples).expect("sample count matches grid")
    }

    /// Values on the collocation grid (inverse transform).
    pub fn samples(&self) -> Vec<f64> {
        let mut buf = vec![ZERO; self.grid.sample_count()];
        for (c, &s) in self.coeffs.iter().zip(&self.grid.0.mode_slot) {
            buf[s] = *c;
        }
        self.grid.transform(&mut buf, true);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Applies `f` to the collocation samples and analyzes the result.
    pub fn map_samples(&self, f: impl Fn(f64) -> f64) -> Self {
        let s: Vec<f64> = self.samples().into_iter().map(f).collect();
        Self::analyze(&self.grid, &s).expect("sample count matches grid")
    }

    /// Nonzero modes in the half-space k > 0 (lexicographic) with the
    /// combined coefficient c(k) + conj(c(-k)), plus the real part of c(0).
    fn half_space_terms(&self) -> (f64, Vec<(Mode, Complex64)>) {
        let count = self.coeffs.len();
        let zero = count / 2;
        let mut terms = Vec::new();
        for i in zero + 1..count {
            let j = self.grid.conjugate_index(i);
            let c = self.coeffs[i] + self.coeffs[j].conj();
            if c.re != 0.0 || c.im != 0.0 {
                terms.push((self.grid.mode(i), c));
            }
        }
        (self.coeffs[zero].re, terms)
    }

    /// Evaluates `sum_k c(k) e^{ik.x}` by direct summation at arbitrary
    /// points, flattened with stride `dim`.
    pub fn eval_points(&self, coords: &[f64]) -> Vec<f64> {
        let dim = self.grid.dim();
        assert_eq!(coords.len() % dim, 0, "coordinates must have stride dim");
        let (c0, terms) = self.half_space_terms();
        let k_max = self.grid.k_max();
        let tabulate = terms.len() > dim * (k_max + 1);
        coords
            .par_chunks(dim)
            .map(|x| {
                if tabulate {
                    eval_tabulated(c0, &terms, x, k_max)
                } else {
                    eval_direct(c0, &terms, x)
                }
            })
            .collect()
    }

    /// Value at a single point.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let (c0, terms) = self.half_space_terms();
        eval_direct(c0, &terms, &x[..self.grid.dim()])
    }

    /// Pre-extracted nonzero terms for repeated single-point evaluation.
    pub fn evaluator(&self) -> PointEvaluator {
        let (c0, terms) = self.half_space_terms();
        let dim = self.grid.dim();
        let k_max = self.grid.k_max();
        PointEvaluator {
            dim,
            k_max,
            tabulate: terms.len() > dim * (k_max + 1),
            c0,
            terms,
        }
    }

    /// Partial derivative along `axis`.
    pub fn derivative(&self, axis: usize) -> Self {
        assert!(axis < self.grid.dim(), "axis {axis} out of range");
        self.map_modes(|k, c| c * Complex64::new(0.0, k[axis] as f64))
    }

    pub fn gradient(&self) -> VectorField {
        VectorField {
            comps: (0..self.grid.dim()).map(|d| self.derivative(d)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[self.coeffs.len() / 2].re
    }

    pub fn remove_mean(&self) -> Self {
        let mut f = self.clone();
        let zero = f.coeffs.len() / 2;
        f.coeffs[zero] = ZERO;
        f
    }

    pub fn add_constant(&self, c: f64) -> Self {
        let mut f = self.clone();
        let zero = f.coeffs.len() / 2;
        f.coeffs[zero] += c;
        f
    }

    pub fn scale(&self, a: f64) -> Self {
        SpectralField {
            grid: self.grid.clone(),
            coeffs: self.coeffs.iter().map(|c| c * a).collect(),
        }
    }

    /// `x -> f(x + shift)`.
    pub fn translate(&self, shift: &[f64]) -> Self {
        let dim = self.grid.dim();
        self.map_modes(|k, c| {
            let phase: f64 = (0..dim).map(|d| k[d] as f64 * shift[d]).sum();
            c * Complex64::from_polar(1.0, phase)
        })
    }

    /// Pointwise product through the padded grid, re-truncated.
    pub fn product(&self, other: &SpectralField) -> Result<Self> {
        self.check_grid(other)?;
        let a = self.samples();
        let b = other.samples();
        let p: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        Self::analyze(&self.grid, &p)
    }

    /// `x -> f(x + w(x))`, evaluated at the warped collocation points by
    /// direct summation and re-analyzed.
    pub fn compose_warped(&self, w: &VectorField) -> Result<Self> {
        let dim = self.grid.dim();
        if w.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "displacement has {} components on a {dim}-torus",
                w.len()
            )));
        }
        if w.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        let coords = warped_coordinates(w);
        let vals = self.eval_points(&coords);
        Self::analyze(&self.grid, &vals)
    }

    /// `(sum_k (1+|k|^2)^s |c(k)|^2)^{1/2}`.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        let modes = self.grid.modes();
        self.coeffs
            .iter()
            .zip(modes)
            .map(|(c, k)| {
                let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
                (1.0 + k2).powf(s) * c.norm_sqr()
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.sobolev_norm(0.0)
    }

    /// Max |sample| on the padded collocation grid.
    pub fn sup_norm(&self) -> f64 {
        self.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn coeff_abs_sum(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).sum()
    }

    /// Max over k of |c(k) - conj(c(-k))|.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.coeffs.len())
            .map(|i| (self.coeffs[i] - self.coeffs[self.grid.conjugate_index(i)].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Max |c(k) - other(k)|.
    pub fn max_coeff_diff(&self, other: &SpectralField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| c.re == 0.0 && c.im == 0.0)
    }

    /// Indices of modes carrying a nonzero coefficient.
    pub fn support(&self) -> Vec<usize> {
        (0..self.coeffs.len())
            .filter(|&i| self.coeffs[i].re != 0.0 || self.coeffs[i].im != 0.0)
            .collect()
    }
}

/// Evaluates a field at arbitrary points without rescanning its modes.
#[derive(Clone, Debug)]
pub struct PointEvaluator {
    dim: usize,
    k_max: usize,
    tabulate: bool,
    c0: f64,
    terms: Vec<(Mode, Complex64)>,
}

impl PointEvaluator {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let x = &x[..self.dim];
        if self.tabulate {
            eval_tabulated(self.c0, &self.terms, x, self.k_max)
        } else {
            eval_direct(self.c0, &self.terms, x)
        }
    }

    pub fn is_zero(&self) -> bool {
        self.c0 == 0.0 && self.terms.is_empty()
    }
}

fn eval_direct(c0: f64, terms: &[(Mode, Complex64)], x: &[f64]) -> f64 {
    let mut acc = c0;
    for (k, c) in terms {
        let phase: f64 = x.iter().zip(k).map(|(xi, &ki)| ki as f64 * xi).sum();
        let (s, co) = phase.sin_cos();
        acc += c.re * co - c.im * s;
    }
    acc
}

fn eval_tabulated(c0: f64, terms: &[(Mode, Complex64)], x: &[f64], k_max: usize) -> f64 {
    let side = k_max + 1;
    let mut table = vec![ZERO; x.len() * side];
    for (d, xd) in x.iter().enumerate() {
        for m in 0..side {
            let (s, c) = (m as f64 * xd).sin_cos();
            table[d * side + m] = Complex64::new(c, s);
        }
    }
    let mut acc = c0;
    for (k, c) in terms {
        let mut e = Complex64::new(1.0, 0.0);
        for (d, &kd) in k.iter().take(x.len()).enumerate() {
            let t = table[d * side + kd.unsigned_abs() as usize];
            e *= if kd < 0 { t.conj() } else { t };
        }
        acc += c.re * e.re - c.im * e.im;
    }
    acc
}

/// Collocation points displaced by `w`, flattened with stride `dim`.
pub fn warped_coordinates(w: &VectorField) -> Vec<f64> {
    let grid = w.grid();
    let dim = grid.dim();
    let ws: Vec<Vec<f64>> = w.comps.iter().map(|c| c.samples()).collect();
    let mut coords = Vec::with_capacity(grid.sample_count() * dim);
    for i in 0..grid.sample_count() {
        let x = grid.sample_point(i);
        for d in 0..dim {
            coords.push(x[d] + ws[d][i]);
        }
    }
    coords
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        assert!(self.grid == rhs.grid, "grid mismatch in addition");
        SpectralField {
            grid: self.grid.clone(),
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        assert!(self.grid == rhs.grid, "grid mismatch in subtraction");
        SpectralField {
            grid: self.grid.clone(),
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &SpectralField {
    type Output = SpectralField;
    fn neg(self) -> SpectralField {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &SpectralField {
    type Output = SpectralField;
    fn mul(self, a: f64) -> SpectralField {
        self.scale(a)
    }
}

/// Ordered list of fields on one grid.
#[derive(Clone, Debug)]
pub struct VectorField {
    comps: Vec<SpectralField>,
}

impl VectorField {
    pub fn new(comps: Vec<SpectralField>) -> Result<Self> {
        if comps.is_empty() {
            return Err(Error::ShapeMismatch("vector field needs a component".into()));
        }
        if comps.iter().any(|c| c.grid != comps[0].grid) {
            return Err(Error::GridMismatch);
        }
        Ok(VectorField { comps })
    }

    pub fn zeros(grid: &TorusGrid, m: usize) -> Self {
        VectorField {
            comps: (0..m).map(|_| SpectralField::zeros(grid)).collect(),
        }
    }

    pub fn constant(grid: &TorusGrid, values: &[f64]) -> Self {
        VectorField {
            comps: values.iter().map(|&v| SpectralField::constant(grid, v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.comps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps.is_empty()
    }

    pub fn grid(&self) -> &TorusGrid {
        self.comps[0].grid()
    }

    pub fn comps(&self) -> &[SpectralField] {
        &self.comps
    }

    pub fn comp(&self, i: usize) -> &SpectralField {
        &self.comps[i]
    }

    pub fn into_comps(self) -> Vec<SpectralField> {
        self.comps
    }

    /// Components `range` as a new vector field.
    pub fn slice(&self, start: usize, end: usize) -> VectorField {
        VectorField {
            comps: self.comps[start..end].to_vec(),
        }
    }

    pub fn concat(&self, other: &VectorField) -> VectorField {
        let mut comps = self.comps.clone();
        comps.extend(other.comps.iter().cloned());
        VectorField { comps }
    }

    pub fn map(&self, f: impl Fn(&SpectralField) -> SpectralField) -> VectorField {
        VectorField {
            comps: self.comps.iter().map(f).collect(),
        }
    }

    pub fn try_map(&self, f: impl Fn(&SpectralField) -> Result<SpectralField>) -> Result<VectorField> {
        Ok(VectorField {
            comps: self.comps.iter().map(f).collect::<Result<_>>()?,
        })
    }

    pub fn means(&self) -> Vec<f64> {
        self.comps.iter().map(|c| c.mean()).collect()
    }

    pub fn scale(&self, a: f64) -> VectorField {
        self.map(|c| c.scale(a))
    }

    pub fn add_constants(&self, v: &[f64]) -> VectorField {
        VectorField {
            comps: self.comps.iter().zip(v).map(|(c, &a)| c.add_constant(a)).collect(),
        }
    }

    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.comps
            .iter()
            .map(|c| c.sobolev_norm(s).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Max over components of the sup norm.
    pub fn sup_norm(&self) -> f64 {
        self.comps.iter().map(|c| c.sup_norm()).fold(0.0, f64::max)
    }

    pub fn samples(&self) -> Vec<Vec<f64>> {
        self.comps.par_iter().map(|c| c.samples()).collect()
    }

    pub fn analyze(grid: &TorusGrid, samples: &[Vec<f64>]) -> Result<VectorField> {
        let comps = samples
            .par_iter()
            .map(|s| SpectralField::analyze(grid, s))
            .collect::<Result<Vec<_>>>()?;
        VectorField::new(comps)
    }

    /// Jacobian matrix field (d_j v_i).
    pub fn jacobian(&self) -> MatrixField {
        let dim = self.grid().dim();
        let mut entries = Vec::with_capacity(self.len() * dim);
        for c in &self.comps {
            for d in 0..dim {
                entries.push(c.derivative(d));
            }
        }
        MatrixField {
            rows: self.len(),
            cols: dim,
            entries,
        }
    }

    pub fn max_coeff_diff(&self, other: &VectorField) -> f64 {
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.max_coeff_diff(b))
            .fold(0.0, f64::max)
    }
}

impl Add for &VectorField {
    type Output = VectorField;
    fn add(self, rhs: &VectorField) -> VectorField {
        assert_eq!(self.len(), rhs.len(), "length mismatch in addition");
        VectorField {
            comps: self.comps.iter().zip(&rhs.comps).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &VectorField {
    type Output = VectorField;
    fn sub(self, rhs: &VectorField) -> VectorField {
        assert_eq!(self.len(), rhs.len(), "length mismatch in subtraction");
        VectorField {
            comps: self.comps.iter().zip(&rhs.comps).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Neg for &VectorField {
    type Output = VectorField;
    fn neg(self) -> VectorField {
        self.scale(-1.0)
    }
}

/// p x q array of fields on one grid, row-major.
#[derive(Clone, Debug)]
pub struct MatrixField {
    rows: usize,
    cols: usize,
    entries: Vec<SpectralField>,
}

impl MatrixField {
    pub fn new(rows: usize, cols: usize, entries: Vec<SpectralField>) -> Result<Self> {
        if entries.len() != rows * cols || entries.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|e| e.grid != entries[0].grid) {
            return Err(Error::GridMismatch);
        }
        Ok(MatrixField { rows, cols, entries })
    }

    pub fn zeros(grid: &TorusGrid, rows: usize, cols: usize) -> Self {
        MatrixField {
            rows,
            cols,
            entries: (0..rows * cols).map(|_| SpectralField::zeros(grid)).collect(),
        }
    }

    pub fn constant(grid: &TorusGrid, m: &DMatrix<f64>) -> Self {
        let mut entries = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                entries.push(SpectralField::constant(grid, m[(i, j)]));
            }
        }
        MatrixField {
            rows: m.nrows(),
            cols: m.ncols(),
            entries,
        }
    }

    pub fn identity(grid: &TorusGrid, n: usize) -> Self {
        Self::constant(grid, &DMatrix::identity(n, n))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn grid(&self) -> &TorusGrid {
        self.entries[0].grid()
    }

    pub fn entry(&self, i: usize, j: usize) -> &SpectralField {
        &self.entries[i * self.cols + j]
    }

    pub fn set_entry(&mut self, i: usize, j: usize, f: SpectralField) {
        self.entries[i * self.cols + j] = f;
    }

    pub fn entries(&self) -> &[SpectralField] {
        &self.entries
    }

    pub fn transpose(&self) -> MatrixField {
        let mut entries = Vec::with_capacity(self.entries.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                entries.push(self.entry(i, j).clone());
            }
        }
        MatrixField {
            rows: self.cols,
            cols: self.rows,
            entries,
        }
    }

    /// Entrywise means as a constant matrix.
    pub fn mean(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.entry(i, j).mean())
    }

    pub fn map(&self, f: impl Fn(&SpectralField) -> SpectralField) -> MatrixField {
        MatrixField {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(f).collect(),
        }
    }

    /// Sub-block of rows r0..r1 and columns c0..c1.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> MatrixField {
        let mut entries = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for i in r0..r1 {
            for j in c0..c1 {
                entries.push(self.entry(i, j).clone());
            }
        }
        MatrixField {
            rows: r1 - r0,
            cols: c1 - c0,
            entries,
        }
    }

    /// Matrices at every collocation point.
    pub fn point_matrices(&self) -> Vec<DMatrix<f64>> {
        let samples: Vec<Vec<f64>> = self.entries.par_iter().map(|e| e.samples()).collect();
        let count = self.grid().sample_count();
        (0..count)
            .map(|p| DMatrix::from_fn(self.rows, self.cols, |i, j| samples[i * self.cols + j][p]))
            .collect()
    }

    /// Analyzes a matrix given at every collocation point.
    pub fn from_point_matrices(grid: &TorusGrid, mats: &[DMatrix<f64>]) -> Result<MatrixField> {
        if mats.len() != grid.sample_count() {
            return Err(Error::SampleCountMismatch {
                expected: grid.sample_count(),
                got: mats.len(),
            });
        }
        let (rows, cols) = mats[0].shape();
        let entries = (0..rows * cols)
            .into_par_iter()
            .map(|e| {
                let (i, j) = (e / cols, e % cols);
                let s: Vec<f64> = mats.iter().map(|m| m[(i, j)]).collect();
                SpectralField::analyze(grid, &s)
            })
            .collect::<Result<Vec<_>>>()?;
        MatrixField::new(rows, cols, entries)
    }

    /// Pointwise matrix product.
    pub fn mul(&self, other: &MatrixField) -> Result<MatrixField> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let a = self.point_matrices();
        let b = other.point_matrices();
        let c: Vec<DMatrix<f64>> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        MatrixField::from_point_matrices(self.grid(), &c)
    }

    /// Pointwise matrix-vector product.
    pub fn mul_vector(&self, v: &VectorField) -> Result<VectorField> {
        if self.cols != v.len() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let vs = v.samples();
        let ms: Vec<Vec<f64>> = self.entries.par_iter().map(|e| e.samples()).collect();
        let count = self.grid().sample_count();
        let out: Vec<Vec<f64>> = (0..self.rows)
            .map(|i| {
                (0..count)
                    .map(|p| (0..self.cols).map(|j| ms[i * self.cols + j][p] * vs[j][p]).sum())
                    .collect()
            })
            .collect();
        VectorField::analyze(self.grid(), &out)
    }

    /// Max over entries of the sup norm.
    pub fn sup_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.sup_norm()).fold(0.0, f64::max)
    }

    /// sqrt of the sum of squared entry H^s norms.
    pub fn sobolev_norm(&self, s: f64) -> f64 {
        self.entries
            .iter()
            .map(|e| e.sobolev_norm(s).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_coeff_diff(&self, other: &MatrixField) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| a.max_coeff_diff(b))
            .fold(0.0, f64::max)
    }
}

impl Add for &MatrixField {
    type Output = MatrixField;
    fn add(self, rhs: &MatrixField) -> MatrixField {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        MatrixField {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().zip(&rhs.entries).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &MatrixField {
    type Output = MatrixField;
    fn sub(self, rhs: &MatrixField) -> MatrixField {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        MatrixField {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().zip(&rhs.entries).map(|(a, b)| a - b).collect(),
        }
    }
}
