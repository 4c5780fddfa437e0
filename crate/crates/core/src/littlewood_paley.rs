//! Dyadic frequency blocks `Delta_j`, partial sums `S_j` and the Zygmund norm.
//!
//! The radial profile `psi` equals 1 on `|xi| <= 1/2` and vanishes for
//! `|xi| >= 1`, glued with the smooth step built on `exp(-1/t)`. Block `j >= 1`
//! uses `phi(2^{-j} k)` with `phi(xi) = psi(xi/2) - psi(xi)`. At integer modes
//! `psi(k)` is the indicator of `k = 0`, so `Delta_0` is the mean.

use std::sync::Arc;

use crate::spectral::{SpectralField, TorusGrid};

fn exp_inv(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 for t <= 0, 1 for t >= 1.
fn smooth_step(t: f64) -> f64 {
    let a = exp_inv(t);
    let b = exp_inv(1.0 - t);
    a / (a + b)
}

/// Radial low-pass profile.
pub fn psi(xi: f64) -> f64 {
    1.0 - smooth_step(2.0 * xi.abs() - 1.0)
}

/// Radial annulus profile supported in `1/2 <= |xi| <= 2`.
pub fn phi(xi: f64) -> f64 {
    psi(xi / 2.0) - psi(xi)
}

/// Sampled dyadic multipliers for every retained mode of a grid.
#[derive(Clone, Debug)]
pub struct DyadicCutoff {
    grid: TorusGrid,
    j_max: usize,
    /// `weights[j][mode]`, j = 0..=j_max.
    weights: Arc<Vec<Vec<f64>>>,
    /// `partial[j][mode]` = sum of weights up to j.
    partial: Arc<Vec<Vec<f64>>>,
}

/// Blocks `Delta_0 u, ..., Delta_{j_max} u`.
#[derive(Clone, Debug)]
pub struct BlockDecomposition {
    pub blocks: Vec<SpectralField>,
    pub j_max: usize,
}

impl BlockDecomposition {
    pub fn sum(&self) -> SpectralField {
        let mut acc = SpectralField::zeros(self.blocks[0].grid());
        for b in &self.blocks {
            acc = &acc + b;
        }
        acc
    }
}

/// Highest block index that can carry retained modes: `|k| <= K sqrt(n)`.
fn block_bound(grid: &TorusGrid) -> usize {
    let kmax = grid.k_max() as f64 * (grid.dim() as f64).sqrt();
    kmax.log2().ceil() as usize + 1
}

impl DyadicCutoff {
    pub fn new(grid: &TorusGrid) -> Self {
        let j_max = block_bound(grid);
        let count = grid.mode_count();
        let mut weights = vec![vec![0.0; count]; j_max + 1];
        for m in 0..count {
            let r = grid.mode_norm(m);
            if r == 0.0 {
                weights[0][m] = 1.0;
                continue;
            }
            let mut stack = 0.0;
            for (j, w) in weights.iter_mut().enumerate().skip(1) {
                let v = phi(r / f64::powi(2.0, j as i32));
                w[m] = v;
                stack += v;
            }
            if stack > 0.0 {
                for w in weights.iter_mut().skip(1) {
                    w[m] /= stack;
                }
            } else {
                // |k| = 1: the profile stack vanishes exactly on the inner
                // edge of the first annulus
                weights[1][m] = 1.0;
            }
        }
        let mut partial = Vec::with_capacity(j_max + 1);
        let mut acc = vec![0.0; count];
        for w in &weights {
            for (a, v) in acc.iter_mut().zip(w) {
                *a += v;
            }
            partial.push(acc.clone());
        }
        DyadicCutoff {
            grid: grid.clone(),
            j_max,
            weights: Arc::new(weights),
            partial: Arc::new(partial),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Highest block index kept; blocks above it are identically zero.
    pub fn j_max(&self) -> usize {
        self.j_max
    }

    /// Sampled multiplier of block `j` at mode index `m`.
    pub fn weight(&self, j: usize, m: usize) -> f64 {
        self.weights.get(j).map_or(0.0, |w| w[m])
    }

    /// Sampled multiplier of `S_j` at mode index `m`.
    pub fn partial_weight(&self, j: i64, m: usize) -> f64 {
        let j = j.max(0) as usize;
        self.partial[j.min(self.j_max)][m]
    }

    /// Max over retained modes of `|sum_j phi_j(k) - 1|`.
    pub fn partition_residual(&self) -> f64 {
        self.partial[self.j_max]
            .iter()
            .map(|v| (v - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `Delta_j u`.
    pub fn block(&self, u: &SpectralField, j: usize) -> SpectralField {
        assert!(u.grid() == &self.grid, "cutoff built for another grid");
        if j > self.j_max {
            return SpectralField::zeros(&self.grid);
        }
        let w = &self.weights[j];
        let mut out = u.clone();
        for (c, &v) in out.coeffs_mut().iter_mut().zip(w) {
            *c *= v;
        }
        out
    }

    /// `S_j u`; for `j <= 0` this is the mean.
    pub fn partial_sum(&self, u: &SpectralField, j: i64) -> SpectralField {
        assert!(u.grid() == &self.grid, "cutoff built for another grid");
        let j = j.max(0) as usize;
        if j >= self.j_max {
            return u.clone();
        }
        let w = &self.partial[j];
        let mut out = u.clone();
        for (c, &v) in out.coeffs_mut().iter_mut().zip(w) {
            *c *= v;
        }
        out
    }

    pub fn decompose(&self, u: &SpectralField) -> BlockDecomposition {
        BlockDecomposition {
            blocks: (0..=self.j_max).map(|j| self.block(u, j)).collect(),
            j_max: self.j_max,
        }
    }

    /// `max_j 2^{jr} sup |Delta_j u|`.
    pub fn zygmund_norm(&self, u: &SpectralField, r: f64) -> f64 {
        (0..=self.j_max)
            .map(|j| {
                let b = self.block(u, j);
                if b.is_zero() {
                    0.0
                } else {
                    f64::powf(2.0, j as f64 * r) * b.sup_norm()
                }
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_supports() {
        assert_eq!(psi(0.0), 1.0);
        assert_eq!(psi(0.5), 1.0);
        assert_eq!(psi(1.0), 0.0);
        assert_eq!(psi(3.0), 0.0);
        assert_eq!(phi(0.5), 0.0);
        assert_eq!(phi(2.0), 0.0);
        assert!(phi(1.0) == 1.0);
        assert!(psi(0.75) > 0.0 && psi(0.75) < 1.0);
    }

    #[test]
    fn partition_is_exact_in_all_dims() {
        for (dim, k) in [(1, 256), (2, 32), (3, 8)] {
            let g = TorusGrid::new(dim, k).unwrap();
            let cut = DyadicCutoff::new(&g);
            assert!(cut.partition_residual() < 1e-14, "dim {dim}");
        }
    }

    #[test]
    fn zero_mode_only_in_first_block() {
        let g = TorusGrid::new(1, 16).unwrap();
        let cut = DyadicCutoff::new(&g);
        let c = SpectralField::constant(&g, 3.0);
        assert!((cut.block(&c, 0).mean() - 3.0).abs() == 0.0);
        for j in 1..=cut.j_max() {
            assert!(cut.block(&c, j).is_zero());
        }
    }

    #[test]
    fn power_of_two_mode_blocks() {
        let g = TorusGrid::new(1, 64).unwrap();
        let cut = DyadicCutoff::new(&g);
        let u = SpectralField::cosine(&g, &[32], 1.0);
        for j in 0..=cut.j_max() {
            let nonzero = !cut.block(&u, j).is_zero();
            assert_eq!(nonzero, j == 5, "block {j}");
        }
    }

    #[test]
    fn negative_partial_sum_is_mean() {
        let g = TorusGrid::new(1, 16).unwrap();
        let cut = DyadicCutoff::new(&g);
        let u = &SpectralField::cosine(&g, &[3], 1.0) + &SpectralField::constant(&g, 0.25);
        let s = cut.partial_sum(&u, -3);
        assert!(s.max_coeff_diff(&SpectralField::constant(&g, 0.25)) == 0.0);
        assert!(cut.partial_sum(&u, 10).max_coeff_diff(&u) == 0.0);
    }

    #[test]
    fn j_max_accounts_for_diagonal_modes() {
        let g = TorusGrid::new(2, 64).unwrap();
        let cut = DyadicCutoff::new(&g);
        // |k| = 64 sqrt 2 lives in blocks 6..7
        let u = SpectralField::cosine(&g, &[64, 64], 1.0);
        assert!(cut.decompose(&u).sum().max_coeff_diff(&u) < 1e-15);
        assert!(cut.j_max() >= 8);
    }
}
