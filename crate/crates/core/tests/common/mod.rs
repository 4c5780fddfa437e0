//! Reference computations shared by the integration tests. Everything here
//! works from coefficients or samples directly and avoids the FFT path.
#![allow(dead_code)]

use std::f64::consts::PI;

use parakam::{SpectralField, TorusGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn golden_omega() -> Vec<f64> {
    vec![1.0, (5f64.sqrt() - 1.0) / 2.0]
}

pub fn golden_alpha() -> f64 {
    PI * (5f64.sqrt() - 1.0)
}

/// `c(k) = N^{-n} sum_x f(x) e^{-ik.x}` by direct summation over `points`
/// equispaced nodes per axis.
pub fn direct_dft(grid: &TorusGrid, points: usize, f: impl Fn(&[f64]) -> f64) -> Vec<Complex64> {
    let dim = grid.dim();
    let total = points.pow(dim as u32);
    let h = 2.0 * PI / points as f64;
    let nodes: Vec<(Vec<f64>, f64)> = (0..total)
        .map(|mut idx| {
            let mut x = vec![0.0; dim];
            for d in (0..dim).rev() {
                x[d] = (idx % points) as f64 * h;
                idx /= points;
            }
            let v = f(&x);
            (x, v)
        })
        .collect();
    grid.modes()
        .iter()
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (x, v) in &nodes {
                let phase: f64 = (0..dim).map(|d| k[d] as f64 * x[d]).sum();
                acc += Complex64::from_polar(*v, -phase);
            }
            acc / total as f64
        })
        .collect()
}

/// `sum_k c(k) e^{ik.x}` term by term.
pub fn synthesize(f: &SpectralField, x: &[f64]) -> f64 {
    let grid = f.grid();
    let dim = grid.dim();
    let mut acc = Complex64::new(0.0, 0.0);
    for (c, k) in f.coeffs().iter().zip(grid.modes()) {
        let phase: f64 = (0..dim).map(|d| k[d] as f64 * x[d]).sum();
        acc += c * Complex64::from_polar(1.0, phase);
    }
    acc.re
}

/// Coefficients of `a b` by discrete convolution, truncated to the box.
pub fn convolve(a: &SpectralField, b: &SpectralField) -> SpectralField {
    let grid = a.grid();
    let dim = grid.dim();
    let mut out = vec![Complex64::new(0.0, 0.0); grid.mode_count()];
    let sa: Vec<usize> = a.support();
    let sb: Vec<usize> = b.support();
    for &i in &sa {
        let ki = grid.mode(i);
        for &j in &sb {
            let kj = grid.mode(j);
            let k: Vec<i64> = (0..dim).map(|d| ki[d] + kj[d]).collect();
            if let Some(m) = grid.index_of(&k) {
                out[m] += a.coeffs()[i] * b.coeffs()[j];
            }
        }
    }
    SpectralField::from_coeffs(grid, out).unwrap()
}

fn glue(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        a / (a + (-1.0 / (1.0 - t)).exp())
    }
}

/// Low-pass profile: 1 on [0, 1/2], 0 from 1 on.
fn low(r: f64) -> f64 {
    1.0 - glue(2.0 * r - 1.0)
}

/// Dyadic block weights `w_j(|k|)`, j = 0..=j_max, with the annulus
/// profiles `low(r/2^{j+1}) - low(r/2^j)` normalized to sum to one.
pub fn block_weights(r: f64, j_max: usize) -> Vec<f64> {
    let mut w = vec![0.0; j_max + 1];
    if r == 0.0 {
        w[0] = 1.0;
        return w;
    }
    for (j, slot) in w.iter_mut().enumerate().skip(1) {
        let scale = (1u64 << j) as f64;
        *slot = low(r / (2.0 * scale)) - low(r / scale);
    }
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        w[1] = 1.0;
    } else {
        for v in &mut w {
            *v /= total;
        }
    }
    w
}

/// Block j of u through the reference weights.
pub fn block(u: &SpectralField, j: usize, j_max: usize) -> SpectralField {
    let grid = u.grid();
    let coeffs = (0..grid.mode_count())
        .map(|m| u.coeffs()[m] * block_weights(grid.mode_norm(m), j_max)[j])
        .collect();
    SpectralField::from_coeffs(grid, coeffs).unwrap()
}

/// `S_j u`, zero for negative j.
pub fn partial(u: &SpectralField, j: i64, j_max: usize) -> SpectralField {
    let grid = u.grid();
    let coeffs = (0..grid.mode_count())
        .map(|m| {
            let w = block_weights(grid.mode_norm(m), j_max);
            let s: f64 = if j < 0 { 0.0 } else { w.iter().take(j as usize + 1).sum() };
            u.coeffs()[m] * s
        })
        .collect();
    SpectralField::from_coeffs(grid, coeffs).unwrap()
}

/// `sum_j S_{max(j-3, 0)} a . Delta_j u` with products by convolution.
pub fn para_product(a: &SpectralField, u: &SpectralField, j_max: usize) -> SpectralField {
    let mut acc = SpectralField::zeros(u.grid());
    for j in 0..=j_max {
        let low = partial(a, (j as i64 - 3).max(0), j_max);
        acc = &acc + &convolve(&low, &block(u, j, j_max));
    }
    acc
}

/// Smallest `gamma` with `|k.omega| |k|^sigma >= 1/gamma` over the full box,
/// both signs of k included.
pub fn brute_gamma(omega: &[f64], sigma: f64, k_max: i64) -> f64 {
    let n = omega.len();
    let mut best: f64 = 0.0;
    let side = (2 * k_max + 1) as usize;
    for idx in 0..side.pow(n as u32) {
        let mut rem = idx;
        let k: Vec<i64> = (0..n)
            .map(|_| {
                let c = (rem % side) as i64 - k_max;
                rem /= side;
                c
            })
            .collect();
        if k.iter().all(|&c| c == 0) {
            continue;
        }
        let dot: f64 = k.iter().zip(omega).map(|(&a, b)| a as f64 * b).sum();
        let norm = k.iter().map(|&a| (a * a) as f64).sum::<f64>().sqrt();
        best = best.max(1.0 / (dot.abs() * norm.powf(sigma)));
    }
    best
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
