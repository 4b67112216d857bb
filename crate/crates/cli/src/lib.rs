//! Run orchestration and artifact I/O for the `polyslab` binary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use polyslab::config::RunConfig;
use polyslab::norms::{self, NormReport};
use polyslab::phase_space::{DistributionField, PhaseGrid};
use polyslab::solver::{self, BoundaryReport, ContractionRow, IterationReport, MomentRow};
use polyslab::verify::{self, SuiteReport};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ITERATION_FILE: &str = "iteration_report.json";
pub const MOMENTS_FILE: &str = "moments.csv";
pub const NORMS_FILE: &str = "norm_report.json";
pub const FIELD_FILE: &str = "field.bin";
pub const VERIFY_FILE: &str = "verify_report.json";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Diverged(String),
    Failed(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Failed(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Diverged(m) => write!(f, "solver diverged: {m}"),
            CliError::Failed(m) => write!(f, "failed: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn config_error(e: polyslab::Error) -> CliError {
    match e {
        polyslab::Error::Config(m) => CliError::Config(m),
        other => CliError::Config(other.to_string()),
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub eps_list: Option<Vec<f64>>,
}

pub fn parse_eps_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| format!("bad ε value {s:?}: {e}")))
        .collect()
}

/// Reads the config (defaults when no path is given), applies overrides and validates the result.
pub fn load_config(path: Option<&Path>, ov: &Overrides) -> Result<RunConfig, CliError> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_toml_str(&text).map_err(config_error)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(o) = &ov.out {
        cfg.out_dir = o.clone();
    }
    if let Some(e) = &ov.eps_list {
        cfg.eps_list = e.clone();
    }
    if let Some(t) = &cfg.boundary_table {
        if !t.is_file() {
            return Err(CliError::Config(format!("boundary_table {} does not exist", t.display())));
        }
    }
    cfg.validated().map_err(config_error)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub config_digest: String,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormArtifact {
    pub schema_version: u32,
    pub config_digest: String,
    pub solution: NormReport,
    pub boundary: BoundaryReport,
}

/// One row of `moments.csv`; velocity and temperatures are empty where the density vanishes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCsvRow {
    pub x: f64,
    pub n: f64,
    pub u1: Option<f64>,
    pub u2: Option<f64>,
    pub u3: Option<f64>,
    pub t_tr: Option<f64>,
    pub t_int: Option<f64>,
    pub flux: f64,
}

impl From<&MomentRow> for MomentCsvRow {
    fn from(r: &MomentRow) -> Self {
        MomentCsvRow {
            x: r.x,
            n: r.density,
            u1: r.velocity.map(|u| u[0]),
            u2: r.velocity.map(|u| u[1]),
            u3: r.velocity.map(|u| u[2]),
            t_tr: r.t_tr,
            t_int: r.t_int,
            flux: r.flux,
        }
    }
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCsvRow {
    pub epsilon: f64,
    pub ratio: f64,
    pub std_error: f64,
    pub replicates: usize,
}

impl From<&ContractionRow> for SweepCsvRow {
    fn from(r: &ContractionRow) -> Self {
        SweepCsvRow { epsilon: r.epsilon, ratio: r.ratio, std_error: r.std_error, replicates: r.replicates }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(runtime)?;
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(runtime)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(runtime)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    fs::write(path, text).map_err(runtime)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(runtime)?;
    serde_json::from_str(&text).map_err(runtime)
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()).map_err(runtime)?;
    Ok(dir)
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, files: &[&str]) -> Result<(), CliError> {
    let mut all = vec![CONFIG_FILE.to_string()];
    all.extend(files.iter().map(|s| s.to_string()));
    let m = Manifest { schema_version: SCHEMA_VERSION, command: command.into(), config_digest: cfg.digest(), files: all };
    write_json(&dir.join(MANIFEST_FILE), &m)
}

/// What a subcommand produced, with the text summary shown to the user.
#[derive(Debug)]
pub struct Outcome {
    pub summary: String,
    pub out_dir: PathBuf,
}

pub fn run_solve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let params = cfg.collision_params();
    let quad = cfg.quadrature();
    let grid = Arc::new(PhaseGrid::new(cfg.grid_spec().map_err(runtime)?).map_err(runtime)?);
    let (bc, boundary) = solver::make_boundary(&cfg.boundary_spec(), grid, &params, cfg.seed).map_err(runtime)?;
    let (f, mut report) = solver::picard_solve(&bc.as_field(), &bc, &params, &quad, &cfg.picard_options()).map_err(runtime)?;
    let dir = prepare_out(cfg)?;
    let rows: Vec<MomentCsvRow> = solver::moments(&f, cfg.alpha).iter().map(MomentCsvRow::from).collect();
    if report.converged {
        let solved = polyslab::kernel::CollisionParams { epsilon: report.epsilon, ..params };
        report.norms = Some(norms::norm_report(&f, cfg.gamma, cfg.a, cfg.seed).map_err(runtime)?);
        let inv = solver::check_invariance(&f, &bc, &boundary.norms, &solved, &quad, cfg.seed).map_err(runtime)?;
        report.invariance = (!inv.degenerate).then_some(inv);
    }
    write_json(&dir.join(ITERATION_FILE), &report)?;
    write_csv(&dir.join(MOMENTS_FILE), &rows)?;
    f.save(&dir.join(FIELD_FILE)).map_err(runtime)?;
    let mut files = vec![ITERATION_FILE, MOMENTS_FILE, FIELD_FILE];
    if let Some(n) = &report.norms {
        let art = NormArtifact { schema_version: SCHEMA_VERSION, config_digest: cfg.digest(), solution: n.clone(), boundary };
        write_json(&dir.join(NORMS_FILE), &art)?;
        files.push(NORMS_FILE);
    }
    write_manifest(&dir, "solve", cfg, &files)?;
    let summary = solve_summary(&report);
    if report.diverged {
        return Err(CliError::Diverged(format!("{summary}after {} ε halvings", report.halvings)));
    }
    if !report.converged {
        return Err(CliError::Failed(format!("{summary}no convergence within {} iterations", cfg.max_iter)));
    }
    Ok(Outcome { summary, out_dir: dir })
}

fn solve_summary(r: &IterationReport) -> String {
    let mut s = String::new();
    let last = r.residuals.last().copied().unwrap_or(f64::NAN);
    let _ = writeln!(s, "iterations       {}", r.iterations);
    let _ = writeln!(s, "residual         {last:.3e} (tol {:.3e})", r.tol);
    let _ = writeln!(s, "epsilon          {} ({} halvings)", r.epsilon, r.halvings);
    match r.fitted_rate {
        Some(q) => {
            let _ = writeln!(s, "contraction      {q:.4e}");
        }
        None => {
            let _ = writeln!(s, "contraction      n/a");
        }
    }
    if let Some(v) = r.revalidation_residual {
        let _ = writeln!(s, "fresh-seed resid {v:.3e}");
    }
    if r.converged && r.invariance.is_none() {
        let _ = writeln!(s, "invariant set    undefined (boundary constants vanish)");
    }
    if let Some(inv) = &r.invariance {
        let m = &inv.input;
        let _ = writeln!(s, "a1               {:.6e}", inv.a1);
        let _ = writeln!(s, "ln a2, a3, a4    {:.4} {:.4} {:.4}", inv.ln_a2, inv.ln_a3, inv.ln_a4);
        let _ = writeln!(
            s,
            "log margins      norm0 {:.4}  singular {:.4}  plane {:.4}  loss {:.4}",
            m.margin_norm0, m.margin_singular, m.margin_plane, m.margin_loss
        );
        let _ = writeln!(s, "in invariant set {}", m.satisfied);
    }
    s
}

pub fn run_verify(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let report: SuiteReport = verify::run_suite(cfg).map_err(runtime)?;
    let dir = prepare_out(cfg)?;
    write_json(&dir.join(VERIFY_FILE), &report)?;
    write_manifest(&dir, "verify", cfg, &[VERIFY_FILE])?;
    let summary = report.table();
    if report.passed() {
        Ok(Outcome { summary, out_dir: dir })
    } else {
        Err(CliError::Failed(summary))
    }
}

/// Pairs `(larger ε, smaller ε)` whose ratio rises by more than three combined standard errors.
pub fn trend_violations(rows: &[SweepCsvRow]) -> Vec<(f64, f64)> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| b.epsilon.total_cmp(&a.epsilon));
    sorted
        .windows(2)
        .filter(|w| w[1].ratio - w[0].ratio > verify::SIGMAS * w[0].std_error.hypot(w[1].std_error))
        .map(|w| (w[0].epsilon, w[1].epsilon))
        .collect()
}

pub fn run_sweep(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let params = cfg.collision_params();
    let quad = cfg.quadrature();
    let grid = Arc::new(PhaseGrid::new(cfg.grid_spec().map_err(runtime)?).map_err(runtime)?);
    let (bc, _) = solver::make_boundary(&cfg.boundary_spec(), grid, &params, cfg.seed).map_err(runtime)?;
    let rows: Vec<SweepCsvRow> = solver::contraction_sweep(&bc, &params, &quad, &cfg.eps_list, cfg.replicates)
        .map_err(runtime)?
        .iter()
        .map(SweepCsvRow::from)
        .collect();
    let dir = prepare_out(cfg)?;
    write_csv(&dir.join(SWEEP_FILE), &rows)?;
    write_manifest(&dir, "sweep", cfg, &[SWEEP_FILE])?;
    let mut s = String::new();
    let _ = writeln!(s, "{:>10} {:>12} {:>12}", "epsilon", "ratio", "std_error");
    for r in &rows {
        let _ = writeln!(s, "{:>10} {:>12.6} {:>12.3e}", r.epsilon, r.ratio, r.std_error);
    }
    let bad = trend_violations(&rows);
    if bad.is_empty() {
        let _ = writeln!(s, "trend: non-increasing as ε decreases (3σ)");
        Ok(Outcome { summary: s, out_dir: dir })
    } else {
        for (hi, lo) in &bad {
            let _ = writeln!(s, "trend violated: ratio at ε = {lo} exceeds ratio at ε = {hi}");
        }
        Err(CliError::Failed(s))
    }
}

/// Reads a field dump written by `solve`.
pub fn load_field(path: &Path) -> Result<DistributionField, CliError> {
    DistributionField::load(path).map_err(runtime)
}
