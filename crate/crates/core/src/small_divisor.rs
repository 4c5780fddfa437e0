//! Diophantine constants and the two small-divisor inverses:
//! `Delta_alpha^{-1}` (divide mode k by `e^{ik alpha} - 1`) and
//! `(omega . d)^{-1}` (divide by `i k.omega`).

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{SpectralField, VectorField};

/// Means below this are treated as roundoff and zeroed.
pub const MEAN_TOLERANCE: f64 = 1e-12;
/// `|k.omega|` below this counts as an exact resonance.
pub const RESONANCE_TOLERANCE: f64 = 1e-14;

/// Frequency vector with its certified Diophantine constant.
#[derive(Clone, Debug)]
pub struct FrequencyVector {
    pub omega: Vec<f64>,
    pub sigma: f64,
    pub gamma: f64,
    /// Box size over which gamma was certified.
    pub certified_k: usize,
}

impl FrequencyVector {
    /// Certifies `omega` over `|k_i| <= k_max`.
    pub fn certify(omega: &[f64], sigma: f64, k_max: usize) -> Result<Self> {
        let gamma = certify_diophantine(omega, sigma, k_max)?;
        Ok(FrequencyVector {
            omega: omega.to_vec(),
            sigma,
            gamma,
            certified_k: k_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }
}

/// Rotation angle with its certified constant for `|q alpha/pi - p|`.
#[derive(Clone, Debug)]
pub struct RotationAngle {
    pub alpha: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub certified_q: usize,
}

impl RotationAngle {
    pub fn certify(alpha: f64, sigma: f64, q_max: usize) -> Result<Self> {
        let gamma = certify_rotation(alpha, sigma, q_max)?;
        Ok(RotationAngle {
            alpha,
            sigma,
            gamma,
            certified_q: q_max,
        })
    }
}

/// Enumerates nonzero modes of the box `|k_i| <= k_max` modulo `k ~ -k`,
/// with the first nonzero component positive.
fn half_box(dim: usize, k_max: usize) -> impl Iterator<Item = Vec<i64>> {
    let side = 2 * k_max + 1;
    let count = side.pow(dim as u32);
    (count / 2 + 1..count).map(move |idx| {
        let mut k = vec![0i64; dim];
        let mut rem = idx;
        for d in (0..dim).rev() {
            k[d] = (rem % side) as i64 - k_max as i64;
            rem /= side;
        }
        k
    })
}

/// Smallest `gamma` with `|k.omega| >= 1 / (gamma |k|^sigma)` on the box
/// `0 < max|k_i| <= k_max`, by exhaustive scan.
pub fn certify_diophantine(omega: &[f64], sigma: f64, k_max: usize) -> Result<f64> {
    if omega.is_empty() || omega.len() > 3 {
        return Err(Error::UnsupportedDimension(omega.len()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma = {sigma} must be positive")));
    }
    let mut gamma: f64 = 0.0;
    for k in half_box(omega.len(), k_max) {
        let dot: f64 = k.iter().zip(omega).map(|(&a, b)| a as f64 * b).sum();
        let norm = (k.iter().map(|&a| (a * a) as f64).sum::<f64>()).sqrt();
        if dot.abs() < RESONANCE_TOLERANCE * norm.max(1.0) {
            return Err(Error::ResonantMode { k, value: dot.abs() });
        }
        gamma = gamma.max(1.0 / (dot.abs() * norm.powf(sigma)));
    }
    Ok(gamma)
}

/// Smallest `gamma` with `|q alpha/pi - p| >= 1/(gamma q^sigma)` for
/// `1 <= q <= q_max` and the nearest integer p.
pub fn certify_rotation(alpha: f64, sigma: f64, q_max: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0 * PI) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} outside (0, 2 pi)")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma = {sigma} must be positive")));
    }
    let mut gamma: f64 = 0.0;
    for q in 1..=q_max {
        let x = q as f64 * alpha / PI;
        let dist = (x - x.round()).abs();
        if dist < RESONANCE_TOLERANCE * x.max(1.0) {
            return Err(Error::ResonantMode {
                k: vec![q as i64],
                value: dist,
            });
        }
        gamma = gamma.max(1.0 / (dist * (q as f64).powf(sigma)));
    }
    Ok(gamma)
}

/// Zeroes a roundoff-level mean, rejects a genuine one.
fn checked_mean_free(f: &SpectralField) -> Result<SpectralField> {
    let m = f.mean();
    if m.abs() > MEAN_TOLERANCE {
        return Err(Error::NonzeroMean { mean: m });
    }
    if m != 0.0 {
        log::debug!("zeroing roundoff mean {m:.3e}");
    }
    Ok(f.remove_mean())
}

/// `u(x + alpha) - u(x)`.
pub fn delta_alpha(u: &SpectralField, alpha: f64) -> SpectralField {
    u.map_modes(|k, c| c * (Complex64::from_polar(1.0, k[0] as f64 * alpha) - 1.0))
}

/// Mode-wise division by `e^{ik alpha} - 1`; requires zero mean.
pub fn delta_alpha_inverse(f: &SpectralField, alpha: &RotationAngle) -> Result<SpectralField> {
    let f = checked_mean_free(f)?;
    let a = alpha.alpha;
    Ok(f.map_modes(|k, c| {
        if k[0] == 0 {
            Complex64::new(0.0, 0.0)
        } else {
            c / (Complex64::from_polar(1.0, k[0] as f64 * a) - 1.0)
        }
    }))
}

/// `(omega . d) u`.
pub fn omega_derivative(u: &SpectralField, omega: &[f64]) -> SpectralField {
    let dim = u.grid().dim();
    u.map_modes(|k, c| {
        let dot: f64 = (0..dim).map(|d| k[d] as f64 * omega[d]).sum();
        c * Complex64::new(0.0, dot)
    })
}

pub fn omega_derivative_vec(v: &VectorField, omega: &[f64]) -> VectorField {
    v.map(|c| omega_derivative(c, omega))
}

/// Mode-wise division by `i k.omega`; requires zero mean.
pub fn omega_directional_inverse(f: &SpectralField, omega: &FrequencyVector) -> Result<SpectralField> {
    let dim = f.grid().dim();
    if omega.dim() != dim {
        return Err(Error::ShapeMismatch(format!(
            "frequency of length {} on a {dim}-torus",
            omega.dim()
        )));
    }
    let f = checked_mean_free(f)?;
    let w = &omega.omega;
    Ok(f.map_modes(|k, c| {
        let dot: f64 = (0..dim).map(|d| k[d] as f64 * w[d]).sum();
        if k.iter().all(|&x| x == 0) {
            Complex64::new(0.0, 0.0)
        } else {
            c / Complex64::new(0.0, dot)
        }
    }))
}

pub fn omega_directional_inverse_vec(f: &VectorField, omega: &FrequencyVector) -> Result<VectorField> {
    f.try_map(|c| omega_directional_inverse(c, omega))
}

pub fn remove_mean(f: &SpectralField) -> SpectralField {
    f.remove_mean()
}

/// Area of the unit sphere in R^n.
fn sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => unreachable!("dimension checked by caller"),
    }
}

fn binomial(n: usize, m: usize) -> f64 {
    (0..m).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Upper bound for `sum_{|k| > K} |k|^{-p}` over `k in Z^n`, or infinity if
/// the series diverges or the bound is unavailable at this K.
pub fn lattice_tail_bound(n: usize, p: f64, k: f64) -> f64 {
    // each lattice point k is dominated by the integral of (|x| - c)^{-p}
    // over its unit cell, c = sqrt(n)/2
    let c = (n as f64).sqrt() / 2.0;
    let r0 = k - 2.0 * c;
    if p <= n as f64 || r0 <= 0.0 {
        return f64::INFINITY;
    }
    let mut acc = 0.0;
    for m in 0..n {
        let e = m as f64 - p + 1.0;
        acc += binomial(n - 1, m) * c.powi((n - 1 - m) as i32) * r0.powf(e) / (-e);
    }
    sphere_area(n) * acc
}

/// Partial sum of `E_tau(theta) = sum_k e^{ik.theta} / (i k.omega |k|^tau)`
/// over `0 < |k| <= K` (Euclidean) with the tail bound
/// `gamma sum_{|k|>K} |k|^{sigma - tau}`.
pub fn fundamental_solution_partial(
    omega: &FrequencyVector,
    tau: f64,
    k_max: usize,
    theta: &[f64],
) -> Result<(f64, f64)> {
    if tau <= omega.sigma + 1.0 {
        return Err(Error::InvalidParameter(format!(
            "tau = {tau} must exceed sigma + 1 = {}",
            omega.sigma + 1.0
        )));
    }
    let n = omega.dim();
    if theta.len() != n {
        return Err(Error::ShapeMismatch("theta has the wrong dimension".into()));
    }
    let kk = k_max as f64;
    let mut value = 0.0;
    for k in half_box(n, k_max) {
        let norm2: f64 = k.iter().map(|&a| (a * a) as f64).sum();
        if norm2 > kk * kk {
            continue;
        }
        let dot: f64 = k.iter().zip(&omega.omega).map(|(&a, b)| a as f64 * b).sum();
        let phase: f64 = k.iter().zip(theta).map(|(&a, t)| a as f64 * t).sum();
        // k and -k combine to 2 sin(k.theta) / (k.omega |k|^tau)
        value += 2.0 * phase.sin() / (dot * norm2.powf(tau / 2.0));
    }
    let tail = omega.gamma * lattice_tail_bound(n, tau - omega.sigma, kk);
    Ok((value, tail))
}
