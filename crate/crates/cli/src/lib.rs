//! Library half of the `mdsinfer` binary: argument types, CSV ingestion,
//! config-file merging and the command implementations.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdsinfer::montecarlo::CellStatus;
use mdsinfer::{
    prepare, Dataset, DesignKind, DesignSpec, ExperimentReport, Grid, GridSpec, PipelineConfig,
    SimulationConfig, TestOutcome,
};
use ndarray::{Array1, Array2};
use serde::Serialize;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Infeasible(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Infeasible(m) => write!(f, "infeasible: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<mdsinfer::Error> for CliError {
    fn from(e: mdsinfer::Error) -> Self {
        use mdsinfer::Error as E;
        let msg = e.to_string();
        match e.root() {
            E::InvalidConfig(_) => CliError::Config(msg),
            E::InvalidInput(_) | E::DimensionMismatch(_) | E::DegenerateSplit(_) | E::Csv(_) => {
                CliError::Data(msg)
            }
            E::Io(_) | E::Json(_) => CliError::Data(msg),
            E::Infeasible => CliError::Infeasible(msg),
            _ => CliError::Numerical(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "mdsinfer", version, about = "Tests and confidence intervals for one coefficient of a high-dimensional logistic regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test H0: beta_j = beta0 on a CSV dataset.
    Test(TestArgs),
    /// Confidence interval for beta_j by inverting the test over a grid.
    Ci(CiArgs),
    /// Empirical size over simulated null datasets.
    SimulateSize(SimArgs),
    /// Empirical power over a grid of shifts h.
    SimulatePower(SimArgs),
    /// Empirical coverage of the inverted intervals.
    SimulateCoverage(SimArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct Tuning {
    #[arg(long)]
    pub eta_scale: Option<f64>,
    #[arg(long)]
    pub rho0: Option<f64>,
    #[arg(long)]
    pub lambda_scale: Option<f64>,
    #[arg(long)]
    pub split_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Plain-text `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub response_col: Option<String>,
    /// Center and scale each covariate to unit sample variance.
    #[arg(long)]
    pub standardize: bool,
    /// Zero-based position among the covariate columns.
    #[arg(long)]
    pub tested_index: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub grid_lo: Option<f64>,
    #[arg(long)]
    pub grid_hi: Option<f64>,
    #[arg(long)]
    pub grid_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CiArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub level: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Comma-separated: identity, toeplitz[:rho], equicorrelation[:rho].
    #[arg(long)]
    pub design: Option<String>,
    /// Comma-separated sparsity levels; `p` means fully dense.
    #[arg(long)]
    pub sparsity: Option<String>,
    /// Comma-separated shifts of the tested coefficient.
    #[arg(long)]
    pub h_grid: Option<String>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Per-coefficient magnitude; defaults to 3 / sqrt(p).
    #[arg(long)]
    pub signal: Option<f64>,
    #[arg(long)]
    pub tested_index: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub level: Option<f64>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub tuning: Tuning,
}

/// Reads a `key = value` file. Blank lines and `#` comments are skipped.
pub fn load_config_file(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected key = value", path.display(), i + 1))
        })?;
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

/// Flag values layered over an optional config file.
struct Settings {
    file: BTreeMap<String, String>,
    allowed: Vec<&'static str>,
    echo: BTreeMap<String, String>,
}

impl Settings {
    fn new(config: &Option<PathBuf>, allowed: Vec<&'static str>) -> CliResult<Self> {
        let file = match config {
            Some(p) => load_config_file(p)?,
            None => BTreeMap::new(),
        };
        if let Some(bad) = file.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(CliError::Config(format!("unknown config key '{bad}'")));
        }
        let mut echo = BTreeMap::new();
        if let Some(p) = config {
            echo.insert("config-file".to_string(), p.display().to_string());
        }
        Ok(Settings { file, allowed, echo })
    }

    fn get<T: FromStr + ToString + Clone>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        debug_assert!(self.allowed.contains(&key));
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(raw) => Some(raw.parse::<T>().map_err(|_| {
                    CliError::Config(format!("cannot parse config value {key} = '{raw}'"))
                })?),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.echo.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    fn get_or<T: FromStr + ToString + Clone>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        let v = self.get(key, flag)?.unwrap_or(default);
        self.echo.insert(key.to_string(), v.to_string());
        Ok(v)
    }
}

const TUNING_KEYS: [&str; 8] = [
    "eta-scale",
    "rho0",
    "lambda-scale",
    "split-fraction",
    "seed",
    "threads",
    "out",
    "format",
];

fn pipeline(settings: &mut Settings, t: &Tuning) -> CliResult<PipelineConfig> {
    let d = PipelineConfig::default();
    let cfg = PipelineConfig {
        eta_scale: settings.get_or("eta-scale", t.eta_scale, d.eta_scale)?,
        rho0: settings.get_or("rho0", t.rho0, d.rho0)?,
        lambda_scale: settings.get_or("lambda-scale", t.lambda_scale, d.lambda_scale)?,
        split_fraction: settings.get_or("split-fraction", t.split_fraction, d.split_fraction)?,
        split_seed: settings.get_or("seed", t.seed, 0)?,
        ..d
    };
    cfg.validate()?;
    Ok(cfg)
}

fn output_target(settings: &mut Settings, t: &Tuning) -> CliResult<(Option<PathBuf>, Option<Format>)> {
    let out = settings.get("out", t.out.as_ref().map(|p| p.display().to_string()))?;
    let format = match settings.get("format", t.format.map(|f| format!("{f:?}").to_lowercase()))? {
        Some(s) => Some(
            Format::from_str(&s, true).map_err(|_| CliError::Config(format!("unknown format '{s}'")))?,
        ),
        None => None,
    };
    Ok((out.map(PathBuf::from), format))
}

fn threads(settings: &mut Settings, t: &Tuning) -> CliResult<Option<usize>> {
    let n = settings.get("threads", t.threads)?;
    if n == Some(0) {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    Ok(n)
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    match threads {
        None => Ok(f()),
        Some(t) => Ok(mdsinfer_pool(t)?.install(f)),
    }
}

fn mdsinfer_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

/// Parses a CSV with a header row into a dataset. The response column must
/// hold 0/1 values; all other columns are covariates, in file order.
pub fn ingest_csv(path: &Path, response_col: &str, standardize: bool) -> CliResult<(Dataset, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let resp = headers
        .iter()
        .position(|h| h == response_col)
        .ok_or_else(|| CliError::Data(format!("no column named '{response_col}' in header")))?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != resp)
        .map(|(_, h)| h.clone())
        .collect();
    let p = names.len();
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(CliError::Data(format!(
                "row {row}: expected {} fields, found {}",
                headers.len(),
                rec.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Data(format!("row {row}: column '{}': cannot parse '{field}'", headers[j]))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("row {row}: column '{}' is not finite", headers[j])));
            }
            if j == resp {
                if v != 0.0 && v != 1.0 {
                    return Err(CliError::Data(format!(
                        "row {row}: response '{response_col}' = {field} is not 0 or 1"
                    )));
                }
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = ys.len();
    let mut x = Array2::from_shape_vec((n, p), xs).map_err(|e| CliError::Data(e.to_string()))?;
    if standardize {
        if n < 2 {
            return Err(CliError::Data("standardization needs at least 2 rows".into()));
        }
        for (j, name) in names.iter().enumerate() {
            let mut col = x.column_mut(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            if var.is_nan() || var <= 0.0 {
                return Err(CliError::Data(format!(
                    "column '{name}' is constant; cannot standardize"
                )));
            }
            let sd = var.sqrt();
            col.mapv_inplace(|v| (v - mean) / sd);
        }
    }
    let ds = Dataset::new(x, Array1::from(ys)).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((ds, names))
}

fn load_data(settings: &mut Settings, d: &DataArgs) -> CliResult<(PathBuf, String, bool, usize)> {
    let path = settings
        .get("data", d.data.as_ref().map(|p| p.display().to_string()))?
        .ok_or_else(|| CliError::Config("--data is required".into()))?;
    let response = settings.get_or("response-col", d.response_col.clone(), "y".to_string())?;
    let standardize = settings.get_or("standardize", d.standardize.then_some(true), false)?;
    let tested = settings
        .get("tested-index", d.tested_index)?
        .ok_or_else(|| CliError::Config("--tested-index is required".into()))?;
    Ok((PathBuf::from(path), response, standardize, tested))
}

fn check_tested(tested: usize, names: &[String]) -> CliResult<()> {
    if tested >= names.len() {
        return Err(CliError::Config(format!(
            "--tested-index {tested} out of range for {} covariates",
            names.len()
        )));
    }
    Ok(())
}

fn emit(text: &str, out: &Option<PathBuf>, stdout: &mut dyn Write) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display()))),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Data(e.to_string())),
    }
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::Data(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::Data(e.to_string()))?;
    }
    String::from_utf8(w.into_inner().map_err(|e| CliError::Data(e.to_string()))?)
        .map_err(|e| CliError::Data(e.to_string()))
}

fn json_text<T: Serialize>(v: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Serialize)]
pub struct TestReport {
    pub tested_index: usize,
    pub tested_column: String,
    pub n: usize,
    pub p: usize,
    pub pilot_estimate: f64,
    pub lambda: f64,
    pub eta: f64,
    #[serde(flatten)]
    pub outcome: TestOutcome,
    pub config: BTreeMap<String, String>,
}

const DATA_KEYS: [&str; 4] = ["data", "response-col", "standardize", "tested-index"];

fn keys(groups: &[&[&'static str]]) -> Vec<&'static str> {
    groups.iter().flat_map(|g| g.iter().copied()).collect()
}

pub fn cmd_test(args: &TestArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let mut s = Settings::new(&args.tuning.config, keys(&[&DATA_KEYS, &TUNING_KEYS, &["beta0", "alpha"]]))?;
    let (path, response, standardize, tested) = load_data(&mut s, &args.data)?;
    let beta0 = s.get_or("beta0", args.beta0, 0.0)?;
    let alpha = s.get_or("alpha", args.alpha, 0.05)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Config(format!("--alpha must lie in (0, 1), got {alpha}")));
    }
    if !beta0.is_finite() {
        return Err(CliError::Config("--beta0 must be finite".into()));
    }
    let cfg = pipeline(&mut s, &args.tuning)?;
    let threads = threads(&mut s, &args.tuning)?;
    let (out, format) = output_target(&mut s, &args.tuning)?;
    let (ds, names) = ingest_csv(&path, &response, standardize)?;
    check_tested(tested, &names)?;

    let (prepared, outcome) = with_threads(threads, || -> mdsinfer::Result<_> {
        let prepared = prepare(&ds, tested, &cfg)?;
        let outcome = prepared.test(beta0, alpha)?;
        Ok((prepared, outcome))
    })??;
    let report = TestReport {
        tested_index: tested,
        tested_column: names[tested].clone(),
        n: ds.n(),
        p: ds.p(),
        pilot_estimate: prepared.pilot_estimate(),
        lambda: prepared.lambda,
        eta: prepared.mds.eta,
        outcome,
        config: s.echo.clone(),
    };
    let text = match format.unwrap_or(Format::Json) {
        Format::Json => json_text(&report)?,
        Format::Csv => {
            let o = &report.outcome;
            csv_text(
                &["tested_column", "beta0", "alpha", "t_n", "q_hat", "z_score", "p_value", "reject", "sigma_e", "pilot_estimate"],
                &[vec![
                    report.tested_column.clone(),
                    o.beta0.to_string(),
                    o.alpha.to_string(),
                    o.t_n.to_string(),
                    o.q_hat.to_string(),
                    o.z_score.to_string(),
                    o.p_value.to_string(),
                    o.reject.to_string(),
                    o.diagnostics.sigma_e.to_string(),
                    report.pilot_estimate.to_string(),
                ]],
            )?
        }
    };
    emit(&text, &out, stdout)
}

fn grid_spec(s: &mut Settings, g: &GridArgs) -> CliResult<GridSpec> {
    let lo = s.get("grid-lo", g.grid_lo)?;
    let hi = s.get("grid-hi", g.grid_hi)?;
    let steps = s.get("grid-steps", g.grid_steps)?;
    let spec = match (lo, hi) {
        (Some(lo), Some(hi)) => {
            let grid = Grid { lo, hi, steps: steps.unwrap_or(81) };
            grid.validate()?;
            GridSpec::Explicit(grid)
        }
        (None, None) => GridSpec::AroundPilot { half_width_scale: 10.0, steps: steps.unwrap_or(81) },
        _ => return Err(CliError::Config("--grid-lo and --grid-hi must be given together".into())),
    };
    if let GridSpec::AroundPilot { steps, .. } = spec {
        if steps < 3 {
            return Err(CliError::Config("--grid-steps must be at least 3".into()));
        }
    }
    Ok(spec)
}

const GRID_KEYS: [&str; 3] = ["grid-lo", "grid-hi", "grid-steps"];

#[derive(Debug, Serialize)]
pub struct CiReport {
    pub tested_index: usize,
    pub tested_column: String,
    pub n: usize,
    pub p: usize,
    #[serde(flatten)]
    pub interval: mdsinfer::ConfidenceInterval,
    pub config: BTreeMap<String, String>,
}

pub fn cmd_ci(args: &CiArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let mut s = Settings::new(&args.tuning.config, keys(&[&DATA_KEYS, &TUNING_KEYS, &GRID_KEYS, &["level"]]))?;
    let (path, response, standardize, tested) = load_data(&mut s, &args.data)?;
    let level = s.get_or("level", args.level, 0.95)?;
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::Config(format!("--level must lie in (0, 1), got {level}")));
    }
    let grid = grid_spec(&mut s, &args.grid)?;
    let cfg = pipeline(&mut s, &args.tuning)?;
    let threads = threads(&mut s, &args.tuning)?;
    let (out, format) = output_target(&mut s, &args.tuning)?;
    let (ds, names) = ingest_csv(&path, &response, standardize)?;
    check_tested(tested, &names)?;

    let interval = with_threads(threads, || mdsinfer::confidence_interval(&ds, tested, level, &grid, &cfg))??;
    let report = CiReport {
        tested_index: tested,
        tested_column: names[tested].clone(),
        n: ds.n(),
        p: ds.p(),
        interval,
        config: s.echo.clone(),
    };
    let text = match format.unwrap_or(Format::Json) {
        Format::Json => json_text(&report)?,
        Format::Csv => {
            let ci = &report.interval;
            csv_text(
                &["tested_column", "level", "lower", "upper", "point_estimate", "degenerate", "hits_grid_edge", "failed_points", "grid_lo", "grid_hi", "grid_steps"],
                &[vec![
                    report.tested_column.clone(),
                    ci.level.to_string(),
                    opt(ci.lower),
                    opt(ci.upper),
                    ci.point_estimate.to_string(),
                    ci.degenerate.to_string(),
                    ci.hits_grid_edge.to_string(),
                    ci.failed_points.to_string(),
                    ci.grid.lo.to_string(),
                    ci.grid.hi.to_string(),
                    ci.grid.steps.to_string(),
                ]],
            )?
        }
    };
    emit(&text, &out, stdout)
}

pub fn parse_designs(text: &str, n: usize, p: usize) -> CliResult<Vec<DesignSpec>> {
    text.split(',')
        .map(|item| {
            let item = item.trim().to_lowercase();
            let (name, param) = match item.split_once(':') {
                Some((a, b)) => (a.to_string(), Some(b.to_string())),
                None => (item.clone(), None),
            };
            let rho = |default: f64| -> CliResult<f64> {
                match &param {
                    Some(v) => v.parse().map_err(|_| CliError::Config(format!("bad design parameter in '{item}'"))),
                    None => Ok(default),
                }
            };
            let kind = match name.as_str() {
                "identity" => DesignKind::Identity,
                "toeplitz" => DesignKind::Toeplitz { rho: rho(0.4)? },
                "equicorrelation" => DesignKind::Equicorrelation { rho: rho(0.01)? },
                _ => return Err(CliError::Config(format!("unknown design '{item}'"))),
            };
            Ok(DesignSpec::new(kind, n, p)?)
        })
        .collect()
}

pub fn parse_sparsities(text: &str, p: usize) -> CliResult<Vec<usize>> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            let s = if t == "p" {
                p
            } else {
                t.parse().map_err(|_| CliError::Config(format!("bad sparsity '{t}'")))?
            };
            if s == 0 || s > p {
                return Err(CliError::Config(format!("sparsity {s} outside [1, {p}]")));
            }
            Ok(s)
        })
        .collect()
}

pub fn parse_floats(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Config(format!("bad number '{t}'")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimKind {
    Size,
    Power,
    Coverage,
}

const SIM_KEYS: [&str; 10] = [
    "design", "sparsity", "h-grid", "reps", "n", "p", "signal", "tested-index", "alpha", "level",
];

/// A fully validated simulation campaign.
#[derive(Debug, Clone)]
pub struct SimPlan {
    pub kind: SimKind,
    pub designs: Vec<DesignSpec>,
    pub sparsities: Vec<usize>,
    pub h_grid: Vec<f64>,
    pub reps: usize,
    pub alpha: f64,
    pub level: f64,
    pub grid: GridSpec,
    pub sim: SimulationConfig,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

pub fn resolve_simulation(kind: SimKind, args: &SimArgs) -> CliResult<SimPlan> {
    let mut s = Settings::new(&args.tuning.config, keys(&[&SIM_KEYS, &TUNING_KEYS, &GRID_KEYS]))?;
    let n = s.get_or("n", args.n, 200)?;
    let p = s.get_or("p", args.p, 500)?;
    let reps = s.get_or("reps", args.reps, 100)?;
    if reps == 0 {
        return Err(CliError::Config("--reps must be at least 1".into()));
    }
    let default_designs = match kind {
        SimKind::Power => "identity",
        _ => "identity,toeplitz:0.4,equicorrelation:0.01",
    };
    let designs = parse_designs(&s.get_or("design", args.design.clone(), default_designs.to_string())?, n, p)?;
    let default_s = if kind == SimKind::Power { "3" } else { "10,p" };
    let sparsities = parse_sparsities(&s.get_or("sparsity", args.sparsity.clone(), default_s.to_string())?, p)?;
    let h_grid = parse_floats(&s.get_or("h-grid", args.h_grid.clone(), "0,0.25,0.5,0.75,1,1.5,2,3".to_string())?)?;
    let signal = s.get("signal", args.signal)?;
    if signal.is_some_and(|v| !v.is_finite()) {
        return Err(CliError::Config("--signal must be finite".into()));
    }
    let tested_index = s.get_or("tested-index", args.tested_index, 0)?;
    if tested_index >= p {
        return Err(CliError::Config(format!("--tested-index {tested_index} out of range for p={p}")));
    }
    let alpha = s.get_or("alpha", args.alpha, 0.05)?;
    let level = s.get_or("level", args.level, 0.95)?;
    if !(alpha > 0.0 && alpha < 1.0) || !(level > 0.0 && level < 1.0) {
        return Err(CliError::Config("--alpha and --level must lie in (0, 1)".into()));
    }
    let grid = grid_spec(&mut s, &args.grid)?;
    let pipeline_cfg = pipeline(&mut s, &args.tuning)?;
    let threads = threads(&mut s, &args.tuning)?;
    let (out, format) = output_target(&mut s, &args.tuning)?;
    if kind == SimKind::Power && (designs.len() != 1 || sparsities.len() != 1) {
        return Err(CliError::Config("simulate-power takes one design and one sparsity".into()));
    }
    Ok(SimPlan {
        kind,
        designs,
        sparsities,
        h_grid,
        reps,
        alpha,
        level,
        grid,
        sim: SimulationConfig {
            pipeline: pipeline_cfg,
            seed: pipeline_cfg.split_seed,
            signal,
            tested_index,
            threads,
            echo: s.echo.clone(),
        },
        out,
        format,
    })
}

pub fn cmd_simulate(kind: SimKind, args: &SimArgs, stdout: &mut dyn Write) -> CliResult<()> {
    let plan = resolve_simulation(kind, args)?;
    let report = match kind {
        SimKind::Size => mdsinfer::run_size_experiment(&plan.designs, &plan.sparsities, plan.reps, plan.alpha, &plan.sim)?,
        SimKind::Power => mdsinfer::run_power_experiment(
            &plan.designs[0],
            plan.sparsities[0],
            &plan.h_grid,
            plan.reps,
            plan.alpha,
            &plan.sim,
        )?,
        SimKind::Coverage => mdsinfer::run_coverage_experiment(
            &plan.designs,
            &plan.sparsities,
            plan.reps,
            plan.level,
            plan.grid,
            &plan.sim,
        )?,
    };
    write_report(&report, &plan.out, plan.format, stdout)?;
    if report.cells.iter().all(|c| c.status == CellStatus::Failed) {
        let infeasible_only = report.cells.iter().all(|c| c.failure_count == 0);
        let msg = "every replication failed".to_string();
        return Err(if infeasible_only { CliError::Infeasible(msg) } else { CliError::Numerical(msg) });
    }
    Ok(())
}

/// With `--out base`, writes `base.csv` and/or `base.json`; otherwise
/// prints the summary table and the requested format to stdout.
fn write_report(
    report: &ExperimentReport,
    out: &Option<PathBuf>,
    format: Option<Format>,
    stdout: &mut dyn Write,
) -> CliResult<()> {
    let csv = report.to_csv_string()?;
    let mut json = report.to_json_string()?;
    json.push('\n');
    match out {
        Some(base) => {
            let with_ext = |ext: &str| {
                let mut p = base.clone().into_os_string();
                p.push(ext);
                PathBuf::from(p)
            };
            if format != Some(Format::Json) {
                emit(&csv, &Some(with_ext(".csv")), stdout)?;
            }
            if format != Some(Format::Csv) {
                emit(&json, &Some(with_ext(".json")), stdout)?;
            }
            emit(&report.summary_table(), &None, stdout)
        }
        None => match format {
            Some(Format::Json) => emit(&json, &None, stdout),
            Some(Format::Csv) => emit(&csv, &None, stdout),
            None => emit(&report.summary_table(), &None, stdout),
        },
    }
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Test(a) => cmd_test(a, stdout),
        Command::Ci(a) => cmd_ci(a, stdout),
        Command::SimulateSize(a) => cmd_simulate(SimKind::Size, a, stdout),
        Command::SimulatePower(a) => cmd_simulate(SimKind::Power, a, stdout),
        Command::SimulateCoverage(a) => cmd_simulate(SimKind::Coverage, a, stdout),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_small_file() {
        let f = write("a,y,b\n1,0,2\n2,1,3\n3,0,5\n4,1,1\n");
        let (ds, names) = ingest_csv(f.path(), "y", false).unwrap();
        assert_eq!((ds.n(), ds.p()), (4, 2));
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(ds.x()[[2, 1]], 5.0);
    }

    #[test]
    fn ingest_errors_name_row_and_column() {
        let f = write("a,y,b\n1,0,2\n2,2,3\n");
        let e = ingest_csv(f.path(), "y", false).unwrap_err();
        assert!(e.to_string().contains("row 2"), "{e}");
        assert_eq!(e.exit_code(), 3);
        let f = write("a,y,b\n1,0,2\n2,1,x\n");
        let e = ingest_csv(f.path(), "y", false).unwrap_err();
        assert!(e.to_string().contains("row 2") && e.to_string().contains("'b'"), "{e}");
        let f = write("a,y,b\n1,0,2\n2,1\n");
        assert!(ingest_csv(f.path(), "y", false).unwrap_err().to_string().contains("row 2"));
        let f = write("a,b\n1,0\n");
        assert!(ingest_csv(f.path(), "y", false).is_err());
    }

    #[test]
    fn standardization() {
        let f = write("a,y,b\n1,0,2\n2,1,3\n3,0,5\n4,1,1\n7,1,0\n");
        let (ds, _) = ingest_csv(f.path(), "y", true).unwrap();
        for j in 0..2 {
            let col = ds.x().column(j);
            let mean = col.sum() / 5.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
        let f = write("a,y,b\n1,0,2\n2,1,2\n3,0,2\n");
        let e = ingest_csv(f.path(), "y", true).unwrap_err();
        assert!(e.to_string().contains("'b'"), "{e}");
    }

    #[test]
    fn parsers() {
        assert_eq!(parse_sparsities("10,p", 50).unwrap(), vec![10, 50]);
        assert!(parse_sparsities("0", 50).is_err());
        assert!(parse_sparsities("51", 50).is_err());
        assert_eq!(parse_floats("0, 0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_floats("0,nan").is_err());
        let d = parse_designs("identity,toeplitz,equicorrelation:0.2", 20, 5).unwrap();
        assert_eq!(d[1].kind, DesignKind::Toeplitz { rho: 0.4 });
        assert_eq!(d[2].kind, DesignKind::Equicorrelation { rho: 0.2 });
        assert!(parse_designs("toeplitz:1.5", 20, 5).is_err());
        assert!(parse_designs("banded", 20, 5).is_err());
    }

    #[test]
    fn config_file_parsing() {
        let f = write("# campaign\nreps = 5\neta_scale=0.25\n\n");
        let m = load_config_file(f.path()).unwrap();
        assert_eq!(m["reps"], "5");
        assert_eq!(m["eta-scale"], "0.25");
        assert!(load_config_file(write("reps 5\n").path()).is_err());
    }

    #[test]
    fn error_mapping() {
        let e: CliError = mdsinfer::Error::Infeasible.at(mdsinfer::Stage::PiFit).into();
        assert_eq!(e.exit_code(), 4);
        assert!(e.to_string().contains("pi-fit"));
        let e: CliError = mdsinfer::Error::SolverFailure("x".into()).into();
        assert_eq!(e.exit_code(), 5);
        let e: CliError = mdsinfer::Error::InvalidConfig("x".into()).into();
        assert_eq!(e.exit_code(), 2);
    }
}
