//! Batch runner behind the command line: executes one configured experiment
//! and writes its artifacts into an output directory.
//!
//! Every run writes `config.json` (normalized echo of the input) and either
//! `run.json` (status, wall time, diagnostics) or `error.json`. Data files
//! hold no wall-clock values, so identical configs give identical CSVs.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::circle;
use crate::config::{ConfigError, ExperimentConfig, ExperimentKind};
use crate::error::Error;
use crate::kam;
use crate::littlewood_paley::DyadicCutoff;
use crate::para::PolynomialInZ;
use crate::probes;
use crate::report::SolveReport;
use crate::small_divisor::{certify_diophantine, certify_rotation};
use crate::spectral::{FieldDocument, SpectralField, TorusGrid};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

/// Slope tolerance of the decay fits.
pub const SLOPE_TOLERANCE: f64 = 0.5;
/// Allowed relative change of the boundedness ratio when K doubles.
pub const RESOLUTION_DRIFT: f64 = 0.2;
pub const PARTITION_BOUND: f64 = 1e-14;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Solver(e) if e.is_non_convergence() => EXIT_NO_CONVERGENCE,
            _ => EXIT_INTERNAL,
        }
    }

    fn category(&self) -> &'static str {
        match self.exit_code() {
            EXIT_CONFIG => "config",
            EXIT_NO_CONVERGENCE => "non_convergence",
            _ => "internal",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub out: PathBuf,
    pub message: Option<String>,
}

fn write(path: &Path, contents: &str) -> Result<(), RunError> {
    fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<(), RunError> {
    write(path, &(serde_json::to_string_pretty(v).expect("json value") + "\n"))
}

/// 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn write(&self, path: &Path) -> Result<(), RunError> {
        let io = |e: csv::Error| RunError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.flush().map_err(|source| RunError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Iteration table: `row, iter, increment_hs, residual_sup, residual_hs,
/// kappa, <params>`; the trailing summary row carries the final residual and
/// the post-hoc certificate in the kappa column.
fn report_table(report: &SolveReport, params: &[String], certificate: f64) -> Table {
    let mut header = vec!["row", "iter", "increment_hs", "residual_sup", "residual_hs", "kappa"];
    header.extend(params.iter().map(|s| s.as_str()));
    let mut t = Table::new(&header);
    for r in &report.rows {
        let mut row = vec![
            "iteration".to_string(),
            r.iter.to_string(),
            fmt_float(r.increment_hs),
            fmt_float(r.residual_sup),
            fmt_float(r.residual_hs),
            fmt_float(r.kappa),
        ];
        row.extend(r.params.iter().map(|&p| fmt_float(p)));
        t.rows.push(row);
    }
    if let Some(last) = report.last() {
        let mut row = vec![
            "summary".to_string(),
            report.iterations().to_string(),
            fmt_float(last.increment_hs),
            fmt_float(last.residual_sup),
            fmt_float(last.residual_hs),
            fmt_float(certificate),
        ];
        row.extend(last.params.iter().map(|&p| fmt_float(p)));
        t.rows.push(row);
    }
    t
}

fn report_json(report: &SolveReport) -> Value {
    json!({
        "status": report.status,
        "iterations": report.iterations(),
        "wall_time_s": report.wall_time_s,
        "diagnostics": report.extra,
    })
}

/// Runs one experiment. `expected` is the subcommand the user typed; a config
/// of another kind is rejected.
pub fn run(config: &ExperimentConfig, expected: ExperimentKind, opts: &RunOptions) -> RunOutcome {
    if let Err(source) = fs::create_dir_all(&opts.out) {
        return RunOutcome {
            exit_code: EXIT_INTERNAL,
            out: opts.out.clone(),
            message: Some(format!("cannot create {}: {source}", opts.out.display())),
        };
    }
    let result = if config.kind != expected {
        Err(RunError::Config(ConfigError::Invalid(format!(
            "config is of kind '{}' but the '{}' subcommand was used",
            config.kind.name(),
            expected.name()
        ))))
    } else {
        write(&opts.out.join("config.json"), &(config.to_json() + "\n")).and_then(|_| dispatch(config, opts))
    };
    finish(result, &opts.out)
}

/// Loads and runs a config file; load failures still produce `error.json`.
pub fn run_file(path: &Path, expected: ExperimentKind, opts: &RunOptions) -> RunOutcome {
    match ExperimentConfig::load(path) {
        Ok(cfg) => run(&cfg, expected, opts),
        Err(e) => {
            if let Err(source) = fs::create_dir_all(&opts.out) {
                return RunOutcome {
                    exit_code: EXIT_INTERNAL,
                    out: opts.out.clone(),
                    message: Some(format!("cannot create {}: {source}", opts.out.display())),
                };
            }
            finish(Err(e.into()), &opts.out)
        }
    }
}

fn finish(result: Result<Value, RunError>, out: &Path) -> RunOutcome {
    match result {
        Ok(summary) => match write_json(&out.join("run.json"), &summary) {
            Ok(()) => RunOutcome {
                exit_code: EXIT_OK,
                out: out.to_path_buf(),
                message: None,
            },
            Err(e) => RunOutcome {
                exit_code: EXIT_INTERNAL,
                out: out.to_path_buf(),
                message: Some(e.to_string()),
            },
        },
        Err(e) => {
            let code = e.exit_code();
            let mut record = json!({
                "category": e.category(),
                "exit_code": code,
                "message": e.to_string(),
            });
            if let RunError::Solver(Error::MaxIterExceeded(report)) = &e {
                record["report"] = report_json(report);
            }
            // best effort: the exit code still reports the failure
            let _ = write_json(&out.join("error.json"), &record);
            RunOutcome {
                exit_code: code,
                out: out.to_path_buf(),
                message: Some(e.to_string()),
            }
        }
    }
}

fn dispatch(config: &ExperimentConfig, opts: &RunOptions) -> Result<Value, RunError> {
    match config.kind {
        ExperimentKind::Circle => run_circle(config, &opts.out),
        ExperimentKind::Torus => run_torus(config, &opts.out),
        ExperimentKind::ValidateOps => run_validate_ops(config, &opts.out, opts.seed),
        ExperimentKind::Diophantine => run_diophantine(config, &opts.out),
    }
}

fn run_circle(config: &ExperimentConfig, out: &Path) -> Result<Value, RunError> {
    let problem = config.circle_problem()?;
    let sol = circle::solve(&problem)?;
    let kappa = sol.report.extra.get("certificate_kappa").copied().unwrap_or(0.0);
    report_table(&sol.report, &["lambda".to_string()], kappa).write(&out.join(&config.outputs.csv))?;
    if let Some(name) = &config.outputs.field {
        let doc = json!({ "u": sol.u.to_document(), "lambda": sol.lambda });
        write_json(&out.join(name), &doc)?;
    }
    let mut summary = report_json(&sol.report);
    summary["lambda"] = json!(sol.lambda);
    let oracles = &config.outputs.oracles;
    if oracles.rotation_number {
        let alpha = problem.alpha.alpha;
        let rho = circle::rotation_number(alpha, &problem.f, sol.lambda, oracles.rotation_iterates);
        summary["rotation_number"] = json!({ "rho": rho, "deviation": (rho - alpha).abs() });
    }
    Ok(summary)
}

fn run_torus(config: &ExperimentConfig, out: &Path) -> Result<Value, RunError> {
    let problem = config.torus_problem()?;
    let n = problem.h.dim();
    let sol = kam::solve_torus(&problem)?;
    let kappa = sol.report.extra.get("certificate_kappa").copied().unwrap_or(0.0);
    let params: Vec<String> = (1..=n)
        .map(|i| format!("xi_{i}"))
        .chain((1..=n).map(|i| format!("mu_{i}")))
        .collect();
    report_table(&sol.report, &params, kappa).write(&out.join(&config.outputs.csv))?;
    if let Some(name) = &config.outputs.field {
        let docs = |v: &crate::spectral::VectorField| -> Vec<FieldDocument> {
            v.comps().iter().map(SpectralField::to_document).collect()
        };
        let doc = json!({
            "ux": docs(&sol.u.ux),
            "uy": docs(&sol.u.uy),
            "xi": sol.xi,
            "mu": sol.mu,
        });
        write_json(&out.join(name), &doc)?;
    }
    let mut summary = report_json(&sol.report);
    summary["xi"] = json!(sol.xi);
    summary["mu"] = json!(sol.mu);
    let oracles = &config.outputs.oracles;
    if oracles.flow {
        let theta0 = vec![0.0; n];
        let dev = kam::flow_oracle(
            &problem.h,
            &sol.u,
            &sol.xi,
            &problem.omega.omega,
            &theta0,
            oracles.flow_time,
            oracles.flow_dt,
        )?;
        summary["flow_oracle"] = json!({ "max_deviation": dev, "t_final": oracles.flow_time, "dt": oracles.flow_dt });
    }
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct FitCheck {
    pub probe: String,
    pub slope: Option<f64>,
    /// Pass when `slope <= bound`.
    pub bound: f64,
    pub pass: bool,
}

/// The operator-estimate probes: partition scan, composition and
/// para-linearization decay fits, boundedness ratio under K doubling.
pub fn validate_ops(config: &ExperimentConfig, seed: u64) -> Result<(Vec<(String, f64, f64)>, Vec<FitCheck>, Value), RunError> {
    let grid = config.grid()?;
    let p = config.probe_config();
    let cut = DyadicCutoff::new(&grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut fits = Vec::new();
    let levels: Vec<usize> = p.levels.iter().copied().filter(|&j| j <= cut.j_max()).collect();

    let partition = cut.partition_residual();
    let mut extra = json!({ "partition_residual": partition, "partition_pass": partition < PARTITION_BOUND });

    let mut check = |name: String, ratios: &[(usize, f64)], bound: f64, points: &mut Vec<(String, f64, f64)>| {
        for &(j, r) in ratios {
            points.push((name.clone(), j as f64, r));
        }
        let slope = probes::fit_decay(ratios).map(|f| f.slope);
        fits.push(FitCheck {
            pass: slope.is_some_and(|s| s <= bound),
            probe: name,
            slope,
            bound,
        });
    };
    for &r in &p.regularities {
        let bound = -r + SLOPE_TOLERANCE;
        let a = probes::lacunary(&grid, r, 0);
        let shift = vec![0.7; grid.dim()];
        let b = &probes::lacunary(&grid, r, 0).translate(&shift) + &SpectralField::constant(&grid, 0.5);
        let cm = probes::cm_decay(&a, &b, &cut, &levels, &mut rng)?;
        check(format!("cm_remainder_r{r}"), &cm, bound, &mut points);
        for deg in [2usize, 3] {
            let mut c = vec![0.0; deg + 1];
            c[deg] = 1.0;
            let f = PolynomialInZ::constant(&grid, &c);
            let pl = probes::pl_decay(&f, r, &cut, &levels, &mut rng)?;
            check(format!("pl_remainder_z{deg}_r{r}"), &pl, bound, &mut points);
        }
    }

    let coarse = probes::boundedness_ratio(&grid, p.s, p.trials, seed)?;
    let fine_grid = TorusGrid::new(grid.dim(), 2 * grid.k_max())?;
    let fine = probes::boundedness_ratio(&fine_grid, p.s, p.trials, seed)?;
    let drift = (fine - coarse).abs() / coarse;
    extra["boundedness"] = json!({
        "ratio_K": coarse,
        "ratio_2K": fine,
        "relative_change": drift,
        "pass": drift <= RESOLUTION_DRIFT,
    });
    Ok((points, fits, extra))
}

fn run_validate_ops(config: &ExperimentConfig, out: &Path, seed: u64) -> Result<Value, RunError> {
    let (points, fits, extra) = validate_ops(config, seed)?;
    let mut t = Table::new(&["probe", "j", "ratio"]);
    for (name, j, r) in &points {
        t.rows.push(vec![name.clone(), format!("{j}"), fmt_float(*r)]);
    }
    t.write(&out.join(&config.outputs.csv))?;
    let mut f = Table::new(&["probe", "slope", "bound", "pass"]);
    for c in &fits {
        f.rows.push(vec![
            c.probe.clone(),
            c.slope.map_or_else(|| "nan".to_string(), fmt_float),
            fmt_float(c.bound),
            c.pass.to_string(),
        ]);
    }
    f.write(&out.join("fits.csv"))?;
    let all_pass = fits.iter().all(|c| c.pass)
        && extra["partition_pass"].as_bool() == Some(true)
        && extra["boundedness"]["pass"].as_bool() == Some(true);
    Ok(json!({ "seed": seed, "all_pass": all_pass, "fits": fits, "checks": extra }))
}

fn run_diophantine(config: &ExperimentConfig, out: &Path) -> Result<Value, RunError> {
    let freq = config.frequency.as_ref().expect("validated");
    let scan = config.scan.as_ref().expect("validated");
    let mut t = Table::new(&["K", "gamma", "status", "resonant_mode"]);
    let mut resonance = Value::Null;
    for &k in &scan.k_values {
        let res = match (&freq.alpha, &freq.omega) {
            (Some(a), _) => certify_rotation(*a, freq.sigma, k),
            (_, Some(w)) => certify_diophantine(w, freq.sigma, k),
            _ => unreachable!("validated"),
        };
        match res {
            Ok(g) => t.rows.push(vec![k.to_string(), fmt_float(g), "ok".into(), String::new()]),
            Err(Error::ResonantMode { k: mode, value }) => {
                let label = mode.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(" ");
                t.rows.push(vec![k.to_string(), "inf".into(), "resonant".into(), label]);
                if resonance.is_null() {
                    resonance = json!({ "K": k, "mode": mode, "value": value });
                }
            }
            Err(e) => return Err(e.into()),
        }
    }
    t.write(&out.join(&config.outputs.csv))?;
    Ok(json!({ "rows": t.rows.len(), "first_resonance": resonance }))
}

/// Runs several configs concurrently, each into `out/<file stem>`.
pub fn run_batch(paths: &[PathBuf], expected: ExperimentKind, out: &Path, seed: u64) -> Vec<RunOutcome> {
    use rayon::prelude::*;
    paths
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let stem = path
                .file_stem()
                .map_or_else(|| format!("run{i}"), |s| s.to_string_lossy().into_owned());
            let opts = RunOptions {
                out: out.join(stem),
                seed,
            };
            run_file(path, expected, &opts)
        })
        .collect()
}
