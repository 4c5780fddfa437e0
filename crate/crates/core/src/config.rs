//! Experiment configuration: strict JSON, unknown keys rejected, validated
//! into solver inputs before anything runs.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::circle::{CircleMode, CircleProblem};
use crate::kam::{HamiltonianData, SolverMode, TorusProblem};
use crate::para::InvertOptions;
use crate::small_divisor::{FrequencyVector, RotationAngle};
use crate::spectral::{CoeffEntry, MatrixField, SpectralField, TorusGrid, VectorField};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Circle,
    Torus,
    ValidateOps,
    Diophantine,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Circle => "circle",
            ExperimentKind::Torus => "torus",
            ExperimentKind::ValidateOps => "validate-ops",
            ExperimentKind::Diophantine => "diophantine",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    #[serde(rename = "K")]
    pub k_max: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Vec<f64>>,
    pub sigma: f64,
}

/// Problem data; which keys are required depends on the experiment kind.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Circle forcing f.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<CoeffEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<Vec<CoeffEntry>>,
    /// One coefficient list per component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1: Option<Vec<Vec<CoeffEntry>>>,
    /// Row-major n x n lists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<Vec<CoeffEntry>>>>,
    /// n^3 lists indexed `(i n + j) n + l`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cubic: Option<Vec<Vec<CoeffEntry>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub s: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// circle: standard | refined | naive; torus: twist | shift (aliases thm1 | thm2).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Para-composition window, refined circle mode only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_max_iter: Option<usize>,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    50
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Circle: rotation number of the corrected map.
    #[serde(default = "yes")]
    pub rotation_number: bool,
    #[serde(default = "default_rotation_iterates")]
    pub rotation_iterates: usize,
    /// Torus: RK4 flow from a point of the torus.
    #[serde(default = "yes")]
    pub flow: bool,
    #[serde(default = "default_flow_time")]
    pub flow_time: f64,
    #[serde(default = "default_flow_dt")]
    pub flow_dt: f64,
}

fn yes() -> bool {
    true
}

fn default_rotation_iterates() -> usize {
    100_000
}

fn default_flow_time() -> f64 {
    10.0
}

fn default_flow_dt() -> f64 {
    1e-3
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            rotation_number: true,
            rotation_iterates: default_rotation_iterates(),
            flow: true,
            flow_time: default_flow_time(),
            flow_dt: default_flow_dt(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_csv")]
    pub csv: String,
    /// Serialized solution; `null` disables the dump.
    #[serde(default = "default_field")]
    pub field: Option<String>,
    #[serde(default)]
    pub oracles: OracleConfig,
}

fn default_csv() -> String {
    "report.csv".into()
}

fn default_field() -> Option<String> {
    Some("solution.json".into())
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            csv: default_csv(),
            field: default_field(),
            oracles: OracleConfig::default(),
        }
    }
}

/// Settings of the operator-estimate probes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_levels")]
    pub levels: Vec<usize>,
    #[serde(default = "default_regularities")]
    pub regularities: Vec<f64>,
    /// Random pairs for the boundedness ratio.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Sobolev index of the boundedness ratio.
    #[serde(default = "default_probe_s")]
    pub s: f64,
}

fn default_levels() -> Vec<usize> {
    vec![3, 4, 5, 6, 7]
}

fn default_regularities() -> Vec<f64> {
    vec![1.0, 2.0]
}

fn default_trials() -> usize {
    20
}

fn default_probe_s() -> f64 {
    2.0
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            levels: default_levels(),
            regularities: default_regularities(),
            trials: default_trials(),
            s: default_probe_s(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// Box sizes at which gamma(K) is certified.
    pub k_values: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<FrequencyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<ProbeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without running a solver.
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.kind {
            ExperimentKind::Circle => {
                self.circle_problem()?;
            }
            ExperimentKind::Torus => {
                self.torus_problem()?;
            }
            ExperimentKind::ValidateOps => {
                self.grid()?;
                let p = self.probe_config();
                if p.levels.len() < 2 {
                    return invalid("probes.levels needs at least two levels");
                }
                if p.trials == 0 {
                    return invalid("probes.trials must be positive");
                }
            }
            ExperimentKind::Diophantine => {
                let f = self.frequency()?;
                if f.alpha.is_some() == f.omega.is_some() {
                    return invalid("frequency needs exactly one of alpha and omega");
                }
                match &self.scan {
                    Some(s) if !s.k_values.is_empty() && s.k_values.iter().all(|&k| k > 0) => {}
                    _ => return invalid("scan.k_values must be a nonempty list of positive integers"),
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TorusGrid, ConfigError> {
        match &self.grid {
            Some(g) => TorusGrid::new(g.dim, g.k_max).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => invalid("missing grid"),
        }
    }

    fn frequency(&self) -> Result<&FrequencyConfig, ConfigError> {
        self.frequency.as_ref().map_or_else(|| invalid("missing frequency"), Ok)
    }

    fn solver(&self) -> Result<&SolverConfig, ConfigError> {
        let s = self.solver.as_ref().map_or_else(|| invalid("missing solver"), Ok)?;
        if !(s.tol > 0.0) || s.max_iter == 0 {
            return invalid("solver.tol and solver.max_iter must be positive");
        }
        Ok(s)
    }

    fn problem(&self) -> Result<&ProblemConfig, ConfigError> {
        self.problem.as_ref().map_or_else(|| invalid("missing problem"), Ok)
    }

    pub fn probe_config(&self) -> ProbeConfig {
        self.probes.clone().unwrap_or_default()
    }

    fn inner_options(&self, s: &SolverConfig) -> InvertOptions {
        let mut o = InvertOptions::default();
        if let Some(t) = s.inner_tol {
            o.tol = t;
        }
        if let Some(m) = s.inner_max_iter {
            o.max_iter = m;
        }
        o
    }

    pub fn circle_problem(&self) -> Result<CircleProblem, ConfigError> {
        let grid = self.grid()?;
        if grid.dim() != 1 {
            return invalid(format!("circle experiments live on T^1, got dim {}", grid.dim()));
        }
        let freq = self.frequency()?;
        if freq.omega.is_some() {
            return invalid("circle experiments take frequency.alpha, not omega");
        }
        let alpha = freq.alpha.map_or_else(|| invalid("missing frequency.alpha"), Ok)?;
        let angle = RotationAngle::certify(alpha, freq.sigma, grid.k_max())
            .map_err(|e| ConfigError::Invalid(format!("frequency: {e}")))?;
        let f = self.problem()?.f.as_ref().map_or_else(|| invalid("missing problem.f"), Ok)?;
        let f = field(&grid, f, "problem.f")?;
        let solver = self.solver()?;
        let mode = match solver.mode.as_deref().unwrap_or("standard") {
            "standard" => CircleMode::Standard,
            "refined" => CircleMode::Refined,
            "naive" => CircleMode::Naive,
            other => return invalid(format!("unknown circle mode '{other}'")),
        };
        let mut p = CircleProblem::new(angle, f, solver.s);
        p.tol = solver.tol;
        p.max_iter = solver.max_iter;
        p.mode = mode;
        if let Some(w) = solver.window {
            p.window = w;
        }
        p.inner = self.inner_options(solver);
        Ok(p)
    }

    pub fn torus_problem(&self) -> Result<TorusProblem, ConfigError> {
        let grid = self.grid()?;
        let n = grid.dim();
        let freq = self.frequency()?;
        if freq.alpha.is_some() {
            return invalid("torus experiments take frequency.omega, not alpha");
        }
        let om = freq.omega.as_ref().map_or_else(|| invalid("missing frequency.omega"), Ok)?;
        if om.len() != n {
            return invalid(format!("omega has {} components on a {n}-torus", om.len()));
        }
        let omega = FrequencyVector::certify(om, freq.sigma, grid.k_max())
            .map_err(|e| ConfigError::Invalid(format!("frequency: {e}")))?;
        let p = self.problem()?;
        let a0 = match &p.a0 {
            Some(e) => field(&grid, e, "problem.a0")?,
            None => SpectralField::zeros(&grid),
        };
        let a1 = match &p.a1 {
            Some(lists) if lists.len() == n => VectorField::new(
                lists
                    .iter()
                    .enumerate()
                    .map(|(i, e)| field(&grid, e, &format!("problem.a1[{i}]")))
                    .collect::<Result<_, _>>()?,
            )
            .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            Some(lists) => return invalid(format!("problem.a1 has {} components, expected {n}", lists.len())),
            None => VectorField::constant(&grid, om),
        };
        let q = match &p.q {
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return invalid(format!("problem.q must be {n}x{n}"));
                }
                let mut entries = Vec::with_capacity(n * n);
                for (i, row) in rows.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        entries.push(field(&grid, e, &format!("problem.q[{i}][{j}]"))?);
                    }
                }
                MatrixField::new(n, n, entries).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            None => MatrixField::constant(&grid, &DMatrix::identity(n, n)),
        };
        let cubic = match &p.cubic {
            Some(lists) if lists.len() == n * n * n => Some(
                lists
                    .iter()
                    .enumerate()
                    .map(|(i, e)| field(&grid, e, &format!("problem.cubic[{i}]")))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            Some(lists) => {
                return invalid(format!("problem.cubic has {} entries, expected {}", lists.len(), n * n * n))
            }
            None => None,
        };
        let h = HamiltonianData::new(a0, a1, q, cubic).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let solver = self.solver()?;
        let mode = match solver.mode.as_deref().unwrap_or("twist") {
            "twist" | "thm1" => SolverMode::Twist,
            "shift" | "thm2" => SolverMode::Shift,
            other => return invalid(format!("unknown torus mode '{other}'")),
        };
        let mut prob = TorusProblem::new(h, omega, mode, solver.s);
        prob.tol = solver.tol;
        prob.max_iter = solver.max_iter;
        prob.inner = self.inner_options(solver);
        Ok(prob)
    }
}

fn field(grid: &TorusGrid, entries: &[CoeffEntry], what: &str) -> Result<SpectralField, ConfigError> {
    SpectralField::from_entries(grid, entries).map_err(|e| ConfigError::Invalid(format!("{what}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CIRCLE: &str = r#"{
        "kind": "circle",
        "grid": {"dim": 1, "K": 64},
        "frequency": {"alpha": 3.883222077450933, "sigma": 1.0},
        "problem": {"f": [{"k": [1], "re": 0.0, "im": -0.025}, {"k": [-1], "re": 0.0, "im": 0.025}]},
        "solver": {"s": 3.0}
    }"#;

    #[test]
    fn circle_config_builds_problem() {
        let cfg = ExperimentConfig::from_json(CIRCLE).unwrap();
        let p = cfg.circle_problem().unwrap();
        assert_eq!(p.mode, CircleMode::Standard);
        assert!((p.f.eval(&[0.5 * std::f64::consts::PI]) - 0.05).abs() < 1e-15);
        assert_eq!(p.tol, 1e-10);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = CIRCLE.replace("\"s\": 3.0", "\"s\": 3.0, \"tolerance\": 1");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(ConfigError::Parse(_))));
        let text = CIRCLE.replace("\"sigma\"", "\"sgima\"");
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn non_hermitian_forcing_rejected() {
        let text = CIRCLE.replace("\"im\": 0.025", "\"im\": 0.5");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn mode_names_checked() {
        let text = CIRCLE.replace("\"s\": 3.0", "\"s\": 3.0, \"mode\": \"newton\"");
        assert!(ExperimentConfig::from_json(&text).is_err());
        let text = CIRCLE.replace("\"s\": 3.0", "\"s\": 3.0, \"mode\": \"naive\"");
        assert_eq!(ExperimentConfig::from_json(&text).unwrap().circle_problem().unwrap().mode, CircleMode::Naive);
    }

    #[test]
    fn torus_defaults_to_integrable_data() {
        let text = r#"{
            "kind": "torus",
            "grid": {"dim": 2, "K": 8},
            "frequency": {"omega": [1.0, 0.6180339887498949], "sigma": 1.0},
            "problem": {},
            "solver": {"s": 3.0, "mode": "thm2"}
        }"#;
        let p = ExperimentConfig::from_json(text).unwrap().torus_problem().unwrap();
        assert_eq!(p.mode, SolverMode::Shift);
        assert!(p.h.a0.is_zero());
    }

    #[test]
    fn resonant_frequency_is_config_error() {
        let text = CIRCLE.replace("3.883222077450933", "2.6927937030769655");
        assert!(matches!(ExperimentConfig::from_json(&text), Err(ConfigError::Invalid(_))));
    }
}
