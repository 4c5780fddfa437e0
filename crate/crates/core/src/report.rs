//! Per-iteration diagnostics shared by both solvers.

use std::collections::BTreeMap;

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct IterationRow {
    pub iter: usize,
    /// H^s norm of the increment u_{k+1} - u_k.
    pub increment_hs: f64,
    pub residual_sup: f64,
    pub residual_hs: f64,
    /// lambda for the circle solver, (xi, mu) for the torus solver.
    pub params: Vec<f64>,
    /// Ratio of successive increments.
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterExceeded,
    ShortCircuit,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub rows: Vec<IterationRow>,
    pub status: Status,
    pub wall_time_s: f64,
    /// Scalar diagnostics computed after the iteration (certificates, bound shapes).
    pub extra: BTreeMap<String, f64>,
}

impl SolveReport {
    pub fn new() -> Self {
        SolveReport {
            rows: Vec::new(),
            status: Status::MaxIterExceeded,
            wall_time_s: 0.0,
            extra: BTreeMap::new(),
        }
    }

    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn last(&self) -> Option<&IterationRow> {
        self.rows.last()
    }

    /// Pushes a row, filling in kappa from the previous increment.
    pub fn push(&mut self, mut row: IterationRow) {
        row.kappa = match self.rows.last() {
            Some(prev) if prev.increment_hs > 0.0 => row.increment_hs / prev.increment_hs,
            _ => 0.0,
        };
        self.rows.push(row);
    }
}

impl Default for SolveReport {
    fn default() -> Self {
        Self::new()
    }
}
