//! Command-line studies. Each command reads a medium from TOML, runs one
//! study and writes `manifest.json`, one or more CSV tables and
//! `summary.json` into the output directory.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::bloch::{
    band_eigenvalues_eps, band_eigenvalues_limit, expansion_terms, sample, solve_finite_with, QuasiperiodicProblem,
};
use crate::defect::{
    approximate_eigenfunction, approximation_error, decay_exponent, decomposition_diagnostic, defect_eigenvalues,
    gap_filter, limit_decay, limit_gap, neumann_modes, DefectModeResult, NeumannMode,
};
use crate::model::{parse_medium_with_overrides, MediumSpec};
use crate::oracle::{extrapolated_gap_eigenvalues, TruncatedProblem};
use crate::spectrum::{band_function, compute_bands, default_theta_grid};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Module(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn module<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Module(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "hicontrast", version, about = "Band, defect-mode and rate studies for 1D high-contrast media")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// Medium description (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Override a config leaf, e.g. `--set geometry.h=0.4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// ε values: `2^-3..2^-8` or a comma-separated list.
    #[arg(long, global = true)]
    pub eps_list: Option<String>,
    #[arg(long, global = true)]
    pub lambda_max: Option<f64>,
    /// 1-based gap index.
    #[arg(long, global = true)]
    pub gap: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Limit band structure from the discriminant.
    Bands,
    /// Band functions λ_n(θ) of the limit problem.
    Dispersion {
        #[arg(long, default_value_t = 3)]
        bands: usize,
    },
    /// Neumann eigenvalues on the defect and the ones lying in gaps.
    DefectLimit {
        #[arg(long, default_value_t = 6)]
        modes: usize,
    },
    /// Defect eigenvalues at the configured ε.
    DefectEps,
    /// Measured decay exponent against the limit value.
    Decay,
    /// A convergence table over the ε list with its fitted log-log slope.
    Rates {
        #[arg(long, value_enum)]
        quantity: Quantity,
        /// Cut-off exponent for the decomposition diagnostic.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        /// Band index for `bloch`.
        #[arg(long, default_value_t = 2)]
        band: usize,
        /// Quasimomentum for `bloch`.
        #[arg(long, default_value_t = PI / 2.0)]
        theta: f64,
    },
    /// Resolvent convergence with and without the ε² corrector.
    ResolventRate {
        #[arg(long, default_value_t = 0.7)]
        theta: f64,
        /// Mesh elements on each of the soft and stiff parts.
        #[arg(long, default_value_t = 512)]
        mesh: usize,
    },
    /// Matching-determinant eigenvalues against the truncated-line solver.
    OracleCheck {
        #[arg(long, default_value_t = 256)]
        nodes_per_cell: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Quantity {
    /// `|λ_ε − λ₀|`.
    LambdaEps,
    /// `‖u_ε‖` outside `D`.
    OutsideNorm,
    /// `|μ₁^ε − μ₁|`.
    Mu1,
    /// `‖w_ε‖` and `‖w_ε′‖`.
    Decomposition,
    /// Residual of the approximate eigenfunction and its distance to `u_ε`.
    Residual,
    /// `|λ_n^ε(θ) − λ_n(θ)|`.
    Bloch,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Command,
    pub medium_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub overrides: Vec<(String, String)>,
    pub eps_list: Vec<f64>,
    pub lambda_max: f64,
    pub gap: usize,
    pub tol: f64,
    pub deterministic: bool,
    pub tool_version: &'static str,
    pub medium: String,
}

/// One CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Bool(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            // 17 significant digits round-trip every f64
            Cell::Num(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
        }
    }
}

impl Table {
    fn new(file: &str, header: &[&str]) -> Self {
        Self {
            file: file.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(&self.file);
        let io = |e: csv::Error| CliError::Io {
            path: path.clone(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io { path: path.clone(), source: e })
    }
}

/// Tables and headline numbers of one study.
#[derive(Debug, Clone)]
pub struct StudyOutput {
    pub tables: Vec<Table>,
    pub summary: Value,
}

/// Least-squares slope of `ln y` against `ln x`; `None` when fewer than two
/// points have positive `y`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Parses `2^-3..2^-8` (every dyadic power in between) or `0.1,0.05,...`.
pub fn parse_eps_list(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("cannot read ε list `{text}`"));
    let list = if let Some((a, b)) = text.split_once("..") {
        let exp = |s: &str| -> Result<i32, CliError> {
            s.trim().strip_prefix("2^").and_then(|e| e.parse().ok()).ok_or_else(bad)
        };
        let (a, b) = (exp(a)?, exp(b)?);
        let range: Vec<i32> = if a >= b { (b..=a).rev().collect() } else { (a..=b).collect() };
        range.into_iter().map(|k| 2f64.powi(k)).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?
    };
    if list.is_empty() || list.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(CliError::Config(format!("ε values must lie in (0, 1): `{text}`")));
    }
    Ok(list)
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, CliError> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::Config(format!("override `{s}` is not KEY=VALUE")))
        })
        .collect()
}

/// Common numerical settings shared by the studies.
#[derive(Debug, Clone)]
pub struct Settings {
    pub eps_list: Vec<f64>,
    pub lambda_max: f64,
    pub gap: usize,
    pub tol: f64,
}

impl Settings {
    fn defaults_for(command: &Command) -> Vec<f64> {
        match command {
            Command::OracleCheck { .. } => vec![0.05, 0.025],
            Command::Rates {
                quantity: Quantity::Decomposition,
                ..
            } => (3..=7).map(|k| 2f64.powi(-k)).collect(),
            _ => (3..=8).map(|k| 2f64.powi(-k)).collect(),
        }
    }
}

/// Parses arguments, runs the study and writes its artifacts; returns the
/// process exit code.
pub fn main_with(args: Args) -> i32 {
    match run(&args) {
        Ok(out) => {
            info!("wrote {} table(s) to {}", out.tables.len(), args.out.display());
            0
        }
        Err(e) => {
            eprintln!("hicontrast: {e}");
            e.exit_code()
        }
    }
}

/// Runs `args.command` and writes its artifacts.
pub fn run(args: &Args) -> Result<StudyOutput, CliError> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let overrides = parse_overrides(&args.overrides)?;
    let spec = parse_medium_with_overrides(&text, &overrides).map_err(|e| CliError::Config(e.to_string()))?;
    let eps_list = match &args.eps_list {
        Some(t) => parse_eps_list(t)?,
        None => Settings::defaults_for(&args.command),
    };
    let settings = Settings {
        eps_list,
        lambda_max: args.lambda_max.unwrap_or(200.0),
        gap: args.gap.unwrap_or(1),
        tol: args.tol.unwrap_or(1e-12),
    };
    if !(settings.lambda_max > 0.0) || !(settings.tol > 0.0) || settings.gap == 0 {
        return Err(CliError::Config(
            "--lambda-max and --tol must be positive and --gap at least 1".into(),
        ));
    }
    let out = run_study(&args.command, &spec, &settings)?;

    fs::create_dir_all(&args.out).map_err(|e| CliError::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let manifest = RunManifest {
        command: args.command.clone(),
        medium_path: Some(path.clone()),
        output_dir: args.out.clone(),
        overrides,
        eps_list: settings.eps_list.clone(),
        lambda_max: settings.lambda_max,
        gap: settings.gap,
        tol: settings.tol,
        deterministic: true,
        tool_version: env!("CARGO_PKG_VERSION"),
        medium: crate::model::serialize_medium(&spec),
    };
    write_json(&args.out.join("manifest.json"), &serde_json::to_value(&manifest).map_err(module)?)?;
    for t in &out.tables {
        t.write(&args.out)?;
    }
    write_json(&args.out.join("summary.json"), &out.summary)?;
    Ok(out)
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(module)?;
    fs::write(path, text + "\n").map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Runs one study without touching the file system.
pub fn run_study(command: &Command, spec: &MediumSpec, s: &Settings) -> Result<StudyOutput, CliError> {
    match command {
        Command::Bands => bands(spec, s),
        Command::Dispersion { bands } => dispersion(spec, s, *bands),
        Command::DefectLimit { modes } => defect_limit(spec, s, *modes),
        Command::DefectEps => defect_eps(spec, s),
        Command::Decay => decay(spec, s),
        Command::Rates {
            quantity,
            alpha,
            band,
            theta,
        } => rates(spec, s, *quantity, *alpha, *band, *theta),
        Command::ResolventRate { theta, mesh } => resolvent_rate(spec, s, *theta, *mesh),
        Command::OracleCheck { nodes_per_cell } => oracle_check(spec, s, *nodes_per_cell),
    }
}

const BAND_GRID: usize = 4000;

fn bands(spec: &MediumSpec, s: &Settings) -> Result<StudyOutput, CliError> {
    let b = compute_bands(spec, s.lambda_max, BAND_GRID, s.tol).map_err(module)?;
    let mut samples = Table::new("bands.csv", &["lambda", "discriminant"]);
    for &(l, d) in &b.samples {
        samples.rows.push(vec![Cell::Num(l), Cell::Num(d)]);
    }
    let mut edges = Table::new("band_edges.csv", &["kind", "index", "lower", "upper"]);
    for (kind, list) in [(0, &b.bands), (1, &b.gaps)] {
        for (i, &(lo, hi)) in list.iter().enumerate() {
            edges.rows.push(vec![Cell::Int(kind), Cell::Int(i as i64 + 1), Cell::Num(lo), Cell::Num(hi)]);
        }
    }
    Ok(StudyOutput {
        tables: vec![samples, edges],
        summary: json!({
            "lambda_range": b.lambda_range,
            "bands": b.bands,
            "gaps": b.gaps,
            "edge_kind_codes": {"0": "band", "1": "gap"},
        }),
    })
}

fn dispersion(spec: &MediumSpec, s: &Settings, n_bands: usize) -> Result<StudyOutput, CliError> {
    let b = compute_bands(spec, s.lambda_max, BAND_GRID, s.tol).map_err(module)?;
    let thetas = default_theta_grid();
    let funcs = (1..=n_bands)
        .map(|n| band_function(spec, &b, n, &thetas, s.tol))
        .collect::<Result<Vec<_>, _>>()
        .map_err(module)?;
    let mut header = vec!["theta".to_string()];
    header.extend((1..=n_bands).map(|n| format!("lambda_{n}")));
    let mut t = Table {
        file: "dispersion.csv".into(),
        header,
        rows: Vec::new(),
    };
    for (i, &th) in thetas.iter().enumerate() {
        let mut row = vec![Cell::Num(th)];
        row.extend(funcs.iter().map(|f| Cell::Num(f.values[i])));
        t.rows.push(row);
    }
    let ranges: Vec<(f64, f64)> = funcs
        .iter()
        .map(|f| {
            let lo = f.values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = f.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();
    Ok(StudyOutput {
        tables: vec![t],
        summary: json!({ "band_ranges": ranges }),
    })
}

fn defect_of(spec: &MediumSpec) -> Result<&crate::model::DefectSpec, CliError> {
    spec.defect
        .as_ref()
        .ok_or_else(|| CliError::Config("this command needs a [defect] block".into()))
}

fn defect_limit(spec: &MediumSpec, s: &Settings, n_modes: usize) -> Result<StudyOutput, CliError> {
    let modes = neumann_modes(defect_of(spec)?, n_modes, 1e-14).map_err(module)?;
    let top = modes.last().map_or(0.0, |m| m.lambda0);
    let b = compute_bands(spec, s.lambda_max.max(1.1 * top), BAND_GRID, s.tol).map_err(module)?;
    let kept = gap_filter(&modes, &b).map_err(module)?;
    let mut t = Table::new("neumann_modes.csv", &["index", "lambda0", "in_gap", "gap", "edge_distance"]);
    let mut tables = Vec::new();
    for m in &modes {
        let k = kept.iter().find(|k| k.index == m.index);
        t.rows.push(vec![
            Cell::Int(m.index as i64),
            Cell::Num(m.lambda0),
            Cell::Bool(k.is_some()),
            Cell::Int(k.and_then(|k| k.gap).map_or(0, |g| g as i64)),
            Cell::Num(k.and_then(|k| k.edge_distance).unwrap_or(0.0)),
        ]);
    }
    tables.push(t);
    for k in &kept {
        let mut u = Table::new(&format!("u0_mode{}.csv", k.index), &["x", "u0"]);
        for (x, v) in k.x.iter().zip(&k.u0) {
            u.rows.push(vec![Cell::Num(*x), Cell::Num(*v)]);
        }
        tables.push(u);
    }
    let summary: Vec<Value> = kept
        .iter()
        .map(|k| json!({"index": k.index, "lambda0": k.lambda0, "gap": k.gap, "edge_distance": k.edge_distance}))
        .collect();
    Ok(StudyOutput {
        tables,
        summary: json!({ "modes": modes.iter().map(|m| m.lambda0).collect::<Vec<_>>(), "in_gaps": summary }),
    })
}

/// The Neumann mode lying in limit gap `gap`; the lowest one if several do.
pub fn limit_mode_in_gap(spec: &MediumSpec, gap: usize) -> Result<NeumannMode, CliError> {
    let defect = defect_of(spec)?;
    let (lo, hi) = limit_gap(spec, gap).map_err(module)?;
    let mut n = 4;
    loop {
        let modes = neumann_modes(defect, n, 1e-14).map_err(module)?;
        if let Some(m) = modes.iter().find(|m| m.lambda0 > lo && m.lambda0 < hi) {
            return Ok(m.clone());
        }
        if modes.last().is_some_and(|m| m.lambda0 >= hi) {
            return Err(CliError::Module(format!(
                "no Neumann eigenvalue of the defect lies in limit gap {gap} = ({lo}, {hi})"
            )));
        }
        n *= 2;
    }
}

/// The defect mode at `spec.epsilon` nearest to `lambda0`, ignoring modes
/// flagged as band-edge modes.
pub fn localised_mode(spec: &MediumSpec, gap: usize, tol: f64, lambda0: f64) -> Result<DefectModeResult, CliError> {
    defect_eigenvalues(spec, gap, tol)
        .map_err(module)?
        .into_iter()
        .filter(|r| !r.edge_mode)
        .min_by(|a, b| (a.lambda_eps - lambda0).abs().total_cmp(&(b.lambda_eps - lambda0).abs()))
        .ok_or_else(|| CliError::Module(format!("no localised defect eigenvalue in gap {gap} at ε = {}", spec.epsilon)))
}

fn defect_eps(spec: &MediumSpec, s: &Settings) -> Result<StudyOutput, CliError> {
    defect_of(spec)?;
    let res = defect_eigenvalues(spec, s.gap, s.tol).map_err(module)?;
    let mut t = Table::new(
        "defect_modes.csv",
        &["lambda_eps", "mu1_eps", "nu_max", "edge_mode", "matching_residual"],
    );
    for r in &res {
        t.rows.push(vec![
            Cell::Num(r.lambda_eps),
            Cell::Num(r.mu1_eps),
            Cell::Num(r.nu_max),
            Cell::Bool(r.edge_mode),
            Cell::Num(r.matching_residual),
        ]);
    }
    let mut tables = vec![t];
    if let Some(r) = res.iter().find(|r| !r.edge_mode) {
        let mut u = Table::new("eigenfunction.csv", &["x", "u_eps"]);
        for (x, v) in r.x.iter().zip(&r.u_eps) {
            u.rows.push(vec![Cell::Num(*x), Cell::Num(*v)]);
        }
        tables.push(u);
        tables.push(ratio_table(r));
    }
    let gap = res.first().map(|r| r.gap);
    Ok(StudyOutput {
        tables,
        summary: json!({
            "epsilon": spec.epsilon,
            "gap": gap,
            "lambda_eps": res.iter().map(|r| r.lambda_eps).collect::<Vec<_>>(),
            "edge_mode": res.iter().map(|r| r.edge_mode).collect::<Vec<_>>(),
        }),
    })
}

fn ratio_table(r: &DefectModeResult) -> Table {
    let mut t = Table::new("period_ratios.csv", &["period_index", "ratio"]);
    for &(k, q) in &r.period_ratios {
        t.rows.push(vec![Cell::Int(k), Cell::Num(q)]);
    }
    t
}

fn decay(spec: &MediumSpec, s: &Settings) -> Result<StudyOutput, CliError> {
    let mode = limit_mode_in_gap(spec, s.gap)?;
    let r = localised_mode(spec, s.gap, s.tol, mode.lambda0)?;
    let (nu, mu1) = decay_exponent(&r, spec, mode.lambda0).map_err(module)?;
    Ok(StudyOutput {
        tables: vec![ratio_table(&r)],
        summary: json!({
            "epsilon": spec.epsilon,
            "lambda0": mode.lambda0,
            "lambda_eps": r.lambda_eps,
            "mu1": mu1,
            "mu1_eps": r.mu1_eps,
            "nu_star": nu,
            "nu_measured": r.nu_max,
            "exponent_error": (r.nu_max - nu).abs(),
        }),
    })
}

fn rates(spec: &MediumSpec, s: &Settings, q: Quantity, alpha: f64, band: usize, theta: f64) -> Result<StudyOutput, CliError> {
    let eps = &s.eps_list;
    let slope = |y: &[f64]| loglog_slope(eps, y);
    if q == Quantity::Bloch {
        let mut t = Table::new("rates.csv", &["epsilon", "error"]);
        let mut err = Vec::new();
        for &e in eps {
            let prob = QuasiperiodicProblem::with_mesh(&spec.with_epsilon(e), theta, 256, 256);
            let a = band_eigenvalues_eps(&prob, band)[band - 1];
            let b = band_eigenvalues_limit(&prob, band)[band - 1];
            err.push((a - b).abs());
            t.rows.push(vec![Cell::Num(e), Cell::Num((a - b).abs())]);
        }
        return Ok(StudyOutput {
            tables: vec![t],
            summary: json!({"quantity": q, "band": band, "theta": theta, "slope": slope(&err)}),
        });
    }

    let mode = limit_mode_in_gap(spec, s.gap)?;
    let (_, mu1) = limit_decay(spec, mode.lambda0).map_err(module)?;
    let mut results = Vec::new();
    for &e in eps {
        let sp = spec.with_epsilon(e);
        results.push((sp.clone(), localised_mode(&sp, s.gap, s.tol, mode.lambda0)?));
    }
    let (table, summary) = match q {
        Quantity::LambdaEps => {
            let mut t = Table::new("rates.csv", &["epsilon", "lambda_eps", "lambda0", "error"]);
            let err: Vec<f64> = results.iter().map(|(_, r)| (r.lambda_eps - mode.lambda0).abs()).collect();
            for ((_, r), er) in results.iter().zip(&err) {
                t.rows.push(vec![
                    Cell::Num(r.epsilon),
                    Cell::Num(r.lambda_eps),
                    Cell::Num(mode.lambda0),
                    Cell::Num(*er),
                ]);
            }
            (t, json!({"lambda0": mode.lambda0, "slope": slope(&err)}))
        }
        Quantity::OutsideNorm => {
            let mut t = Table::new("rates.csv", &["epsilon", "error"]);
            let err: Vec<f64> = results.iter().map(|(_, r)| r.solution.mass_outside(0.0).sqrt()).collect();
            for (&e, er) in eps.iter().zip(&err) {
                t.rows.push(vec![Cell::Num(e), Cell::Num(*er)]);
            }
            (t, json!({"slope": slope(&err)}))
        }
        Quantity::Mu1 => {
            let mut t = Table::new("rates.csv", &["epsilon", "mu1_eps", "mu1", "error"]);
            let err: Vec<f64> = results.iter().map(|(_, r)| (r.mu1_eps - mu1).abs()).collect();
            for ((_, r), er) in results.iter().zip(&err) {
                t.rows.push(vec![Cell::Num(r.epsilon), Cell::Num(r.mu1_eps), Cell::Num(mu1), Cell::Num(*er)]);
            }
            (t, json!({"mu1": mu1, "slope": slope(&err)}))
        }
        Quantity::Decomposition => {
            let mut t = Table::new("rates.csv", &["epsilon", "norm_w", "norm_w_prime", "norm_v_tail"]);
            let (mut w, mut wp, mut vt) = (Vec::new(), Vec::new(), Vec::new());
            for (sp, r) in &results {
                let d = decomposition_diagnostic(sp, r, alpha).map_err(module)?;
                t.rows.push(vec![
                    Cell::Num(sp.epsilon),
                    Cell::Num(d.norm_w),
                    Cell::Num(d.norm_w_prime),
                    Cell::Num(d.norm_v_tail),
                ]);
                w.push(d.norm_w);
                wp.push(d.norm_w_prime);
                vt.push(d.norm_v_tail);
            }
            (
                t,
                json!({"alpha": alpha, "slope_norm_w": slope(&w), "slope_norm_w_prime": slope(&wp), "norm_v_tail": vt}),
            )
        }
        Quantity::Residual => {
            let mut t = Table::new("rates.csv", &["epsilon", "residual_norm", "approximation_error"]);
            let (mut res, mut err) = (Vec::new(), Vec::new());
            for (sp, r) in &results {
                let ap = approximate_eigenfunction(sp, &mode).map_err(module)?;
                let er = approximation_error(&ap, r);
                t.rows.push(vec![Cell::Num(sp.epsilon), Cell::Num(ap.residual_norm), Cell::Num(er)]);
                res.push(ap.residual_norm);
                err.push(er);
            }
            (
                t,
                json!({"slope_residual": slope(&res), "slope_approximation_error": slope(&err)}),
            )
        }
        Quantity::Bloch => unreachable!("handled above"),
    };
    let mut summary = summary;
    summary["quantity"] = json!(q);
    summary["epsilon"] = json!(eps);
    Ok(StudyOutput {
        tables: vec![table],
        summary,
    })
}

/// Right-hand sides of the resolvent study, as functions of the cell variable.
pub fn resolvent_loads() -> [fn(f64) -> Complex64; 3] {
    [
        |_| Complex64::new(1.0, 0.0),
        |y| Complex64::new((2.0 * PI * y).sin(), 0.0),
        |y| Complex64::new(y * y, (3.0 * y).cos()),
    ]
}

/// `(‖u_ε − u⁽⁰⁾‖, ‖u_ε − u⁽⁰⁾ − ε²u⁽²⁾‖)` in `L²_ρ` on the cell.
pub fn resolvent_errors(spec: &MediumSpec, theta: f64, mesh: usize, f: fn(f64) -> Complex64) -> Result<(f64, f64), CliError> {
    let prob = QuasiperiodicProblem::with_mesh(spec, theta, mesh, mesh);
    let asm = prob.assemble();
    let fv = sample(&asm, f);
    let ue = solve_finite_with(&asm, &fv).map_err(module)?;
    let terms = expansion_terms(&prob, &fv, 1).map_err(module)?;
    let e2 = spec.epsilon * spec.epsilon;
    let d0: Vec<Complex64> = ue.iter().zip(&terms.u0).map(|(a, b)| a - b).collect();
    let d1: Vec<Complex64> = d0.iter().zip(&terms.correctors[0]).map(|(a, b)| a - e2 * b).collect();
    Ok((asm.l2_rho(&d0), asm.l2_rho(&d1)))
}

fn resolvent_rate(spec: &MediumSpec, s: &Settings, theta: f64, mesh: usize) -> Result<StudyOutput, CliError> {
    let mut t = Table::new("resolvent_rates.csv", &["epsilon", "f_index", "error", "error_corrected"]);
    let mut slopes = Vec::new();
    for (i, f) in resolvent_loads().into_iter().enumerate() {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for &e in &s.eps_list {
            let (x, y) = resolvent_errors(&spec.with_epsilon(e), theta, mesh, f)?;
            t.rows.push(vec![Cell::Num(e), Cell::Int(i as i64), Cell::Num(x), Cell::Num(y)]);
            a.push(x);
            b.push(y);
        }
        slopes.push(json!({
            "f_index": i,
            "slope": loglog_slope(&s.eps_list, &a),
            "slope_corrected": loglog_slope(&s.eps_list, &b),
        }));
    }
    Ok(StudyOutput {
        tables: vec![t],
        summary: json!({"theta": theta, "mesh": mesh, "rates": slopes}),
    })
}

fn oracle_check(spec: &MediumSpec, s: &Settings, npc: usize) -> Result<StudyOutput, CliError> {
    let mode = limit_mode_in_gap(spec, s.gap)?;
    let (nu, _) = limit_decay(spec, mode.lambda0).map_err(module)?;
    let mut t = Table::new("oracle_check.csv", &["epsilon", "lambda_matching", "lambda_oracle", "abs_diff"]);
    let mut worst: f64 = 0.0;
    let mut one_to_one = true;
    for &e in &s.eps_list {
        let sp = spec.with_epsilon(e);
        let matched: Vec<f64> = defect_eigenvalues(&sp, s.gap, s.tol)
            .map_err(module)?
            .into_iter()
            .filter(|r| !r.edge_mode)
            .map(|r| r.lambda_eps)
            .collect();
        let gap = crate::defect::finite_gap(&sp, s.gap).map_err(module)?;
        let oracle: Vec<f64> = extrapolated_gap_eigenvalues(&TruncatedProblem::new(&sp, npc, nu), gap)
            .map_err(module)?
            .into_iter()
            .map(|p| p.0)
            .collect();
        one_to_one &= matched.len() == oracle.len();
        for (a, b) in matched.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
            t.rows.push(vec![Cell::Num(e), Cell::Num(*a), Cell::Num(*b), Cell::Num((a - b).abs())]);
        }
    }
    Ok(StudyOutput {
        tables: vec![t],
        summary: json!({"max_abs_disagreement": worst, "one_to_one": one_to_one, "epsilon": s.eps_list}),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_eps_lists() {
        let l = parse_eps_list("2^-3..2^-8").unwrap();
        assert_eq!(l, vec![0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625]);
        // written order is kept
        let rev: Vec<f64> = l.iter().rev().copied().collect();
        assert_eq!(parse_eps_list("2^-8..2^-3").unwrap(), rev);
        assert_eq!(parse_eps_list("0.05, 0.025").unwrap(), vec![0.05, 0.025]);
        assert!(parse_eps_list("2^1..2^-2").is_err());
        assert!(parse_eps_list("abc").is_err());
    }

    #[test]
    fn slope_of_a_power_law() {
        let x = [0.1, 0.05, 0.025];
        let y: Vec<f64> = x.iter().map(|e: &f64| 3.0 * e.powf(1.5)).collect();
        assert!((loglog_slope(&x, &y).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&x, &[0.0, 0.0, 1.0]), None);
    }

    #[test]
    fn cells_round_trip() {
        for v in [0.1, 1.0 / 3.0, 2.5e-300, -7.0] {
            assert_eq!(Cell::Num(v).render().parse::<f64>().unwrap(), v);
        }
        assert_eq!(Cell::Int(-3).render(), "-3");
    }

    #[test]
    fn overrides_need_equals() {
        assert!(parse_overrides(&["a.b=1".into()]).is_ok());
        assert!(matches!(parse_overrides(&["a.b".into()]), Err(CliError::Config(_))));
    }
}
