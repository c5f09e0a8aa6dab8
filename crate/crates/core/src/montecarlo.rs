//! Gaussian designs, synthetic logistic models and the replication harness
//! for size, power and coverage experiments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::inference::{normal_cdf, prepare, GridSpec, PipelineConfig};
use crate::linalg::cholesky;
use crate::model::{sigmoid, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignKind {
    Identity,
    /// `Sigma_ij = rho^|i-j|`.
    Toeplitz { rho: f64 },
    /// Unit diagonal, `rho` off the diagonal.
    Equicorrelation { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub n: usize,
    pub p: usize,
}

impl DesignSpec {
    pub fn new(kind: DesignKind, n: usize, p: usize) -> Result<Self> {
        let spec = DesignSpec { kind, n, p };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 || self.p < 2 {
            return Err(Error::InvalidConfig(format!(
                "design needs n >= 4 and p >= 2, got n={} p={}",
                self.n, self.p
            )));
        }
        match self.kind {
            DesignKind::Identity => Ok(()),
            DesignKind::Toeplitz { rho } if rho > -1.0 && rho < 1.0 => Ok(()),
            DesignKind::Equicorrelation { rho } if (0.0..1.0).contains(&rho) => Ok(()),
            kind => Err(Error::InvalidConfig(format!("invalid design {kind:?}"))),
        }
    }

    pub fn covariance(&self) -> Array2<f64> {
        let p = self.p;
        match self.kind {
            DesignKind::Identity => Array2::eye(p),
            DesignKind::Toeplitz { rho } => {
                Array2::from_shape_fn((p, p), |(i, j)| rho.powi(i.abs_diff(j) as i32))
            }
            DesignKind::Equicorrelation { rho } => {
                Array2::from_shape_fn((p, p), |(i, j)| if i == j { 1.0 } else { rho })
            }
        }
    }

    /// Short name used in reports: `identity`, `toeplitz(0.4)`, ...
    pub fn label(&self) -> String {
        match self.kind {
            DesignKind::Identity => "identity".into(),
            DesignKind::Toeplitz { rho } => format!("toeplitz({rho})"),
            DesignKind::Equicorrelation { rho } => format!("equicorrelation({rho})"),
        }
    }
}

/// Draws rows of `N(0, Sigma)` with the Cholesky factor computed once.
#[derive(Debug, Clone)]
pub struct DesignSampler {
    spec: DesignSpec,
    chol_t: Option<Array2<f64>>,
}

impl DesignSampler {
    pub fn new(spec: DesignSpec) -> Result<Self> {
        spec.validate()?;
        let chol_t = match spec.kind {
            DesignKind::Identity => None,
            _ => Some(cholesky(&spec.covariance())?.reversed_axes()),
        };
        Ok(DesignSampler { spec, chol_t })
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Array2<f64> {
        let z = Array2::from_shape_simple_fn((self.spec.n, self.spec.p), || {
            rng.sample::<f64, _>(StandardNormal)
        });
        match &self.chol_t {
            None => z,
            Some(lt) => z.dot(lt),
        }
    }
}

pub fn sample_design(spec: &DesignSpec, seed: u64) -> Result<Array2<f64>> {
    let sampler = DesignSampler::new(*spec)?;
    Ok(sampler.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub s: usize,
    pub signal: f64,
    pub h: f64,
    pub tested_index: usize,
}

impl ModelSpec {
    /// `signal = 3 / sqrt(p)` on the first `s` coordinates.
    pub fn standard(p: usize, s: usize) -> Self {
        ModelSpec {
            s,
            signal: 3.0 / (p as f64).sqrt(),
            h: 0.0,
            tested_index: 0,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.s == 0 || self.s > p {
            return Err(Error::InvalidConfig(format!(
                "sparsity must lie in [1, {p}], got {}",
                self.s
            )));
        }
        if self.tested_index >= p {
            return Err(Error::InvalidConfig(format!(
                "tested index {} out of range for p={p}",
                self.tested_index
            )));
        }
        if !self.signal.is_finite() || !self.h.is_finite() {
            return Err(Error::InvalidConfig("signal and h must be finite".into()));
        }
        Ok(())
    }

    pub fn beta(&self, p: usize) -> Array1<f64> {
        let mut beta = Array1::from_shape_fn(p, |j| if j < self.s { self.signal } else { 0.0 });
        beta[self.tested_index] += self.h;
        beta
    }

    pub fn true_tested(&self) -> f64 {
        self.beta(self.tested_index + 1)[self.tested_index]
    }
}

fn draw_dataset<R: Rng>(sampler: &DesignSampler, beta: &Array1<f64>, rng: &mut R) -> Result<Dataset> {
    let x = sampler.sample(rng);
    let eta = x.dot(beta);
    let y = eta.mapv(|e| if rng.gen::<f64>() < sigmoid(e) { 1.0 } else { 0.0 });
    Dataset::new(x, y)
}

pub fn generate_dataset(design: &DesignSpec, model: &ModelSpec, seed: u64) -> Result<Dataset> {
    model.validate(design.p)?;
    let sampler = DesignSampler::new(*design)?;
    draw_dataset(&sampler, &model.beta(design.p), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const STREAM_DATA: u64 = 0;
pub const STREAM_SPLIT: u64 = 1;

/// Seed for one random stream of one replication.
pub fn derive_seed(master: u64, cell: u64, rep: u64, stream: u64) -> u64 {
    let mut h = splitmix(master);
    for part in [cell, rep, stream] {
        h = splitmix(h ^ part);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Procedure {
    Test { alpha: f64 },
    Interval { level: f64, grid: GridSpec },
}

/// One experimental condition: a design, a model and a null value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub design: DesignSpec,
    pub model: ModelSpec,
    pub beta0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepStatus {
    Completed,
    Infeasible,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub status: RepStatus,
    pub reject: Option<bool>,
    pub z_score: Option<f64>,
    pub covered: Option<bool>,
    pub ci_length: Option<f64>,
    pub degenerate_ci: bool,
    pub error: Option<String>,
}

impl Replication {
    fn from_error(index: usize, e: Error) -> Self {
        Replication {
            index,
            status: if e.is_infeasible() {
                RepStatus::Infeasible
            } else {
                RepStatus::Failed
            },
            reject: None,
            z_score: None,
            covered: None,
            ci_length: None,
            degenerate_ci: false,
            error: Some(e.to_string()),
        }
    }
}

fn run_one(
    cell: &Cell,
    sampler: &DesignSampler,
    procedure: &Procedure,
    pipeline: &PipelineConfig,
    seed: u64,
    cell_index: u64,
    index: usize,
) -> Replication {
    let rep = index as u64;
    let beta = cell.model.beta(cell.design.p);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, cell_index, rep, STREAM_DATA));
    let outcome = draw_dataset(sampler, &beta, &mut rng).and_then(|ds| {
        let cfg = PipelineConfig {
            split_seed: derive_seed(seed, cell_index, rep, STREAM_SPLIT),
            ..*pipeline
        };
        let prepared = prepare(&ds, cell.model.tested_index, &cfg)?;
        match procedure {
            Procedure::Test { alpha } => {
                let out = prepared.test(cell.beta0, *alpha)?;
                Ok(Replication {
                    index,
                    status: RepStatus::Completed,
                    reject: Some(out.reject),
                    z_score: Some(out.z_score),
                    covered: None,
                    ci_length: None,
                    degenerate_ci: false,
                    error: None,
                })
            }
            Procedure::Interval { level, grid } => {
                let ci = prepared.confidence_interval(*level, grid)?;
                Ok(Replication {
                    index,
                    status: RepStatus::Completed,
                    reject: None,
                    z_score: None,
                    covered: Some(ci.covers(beta[cell.model.tested_index])),
                    ci_length: ci.length(),
                    degenerate_ci: ci.degenerate,
                    error: None,
                })
            }
        }
    });
    outcome.unwrap_or_else(|e| Replication::from_error(index, e))
}

/// Runs the replications of one cell in parallel; results come back in
/// replication order.
pub fn run_cell_replications(
    cell: &Cell,
    procedure: &Procedure,
    pipeline: &PipelineConfig,
    reps: usize,
    seed: u64,
    cell_index: u64,
) -> Result<Vec<Replication>> {
    cell.design.validate()?;
    cell.model.validate(cell.design.p)?;
    let sampler = DesignSampler::new(cell.design)?;
    Ok((0..reps)
        .into_par_iter()
        .map(|i| run_one(cell, &sampler, procedure, pipeline, seed, cell_index, i))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    /// Some replications were excluded.
    Partial,
    /// No replication completed.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub design: String,
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub h: f64,
    pub signal: f64,
    pub beta0: f64,
    pub replications: usize,
    pub completed: usize,
    pub infeasible_count: usize,
    pub failure_count: usize,
    pub rejections: Option<usize>,
    pub rejection_rate: Option<f64>,
    pub covered: Option<usize>,
    pub coverage: Option<f64>,
    /// Monte Carlo standard error of whichever rate the cell reports.
    pub se: Option<f64>,
    pub mean_ci_length: Option<f64>,
    pub degenerate_count: usize,
    pub status: CellStatus,
}

/// Aggregates replications of one cell. The result does not depend on the
/// order of `reps`.
pub fn aggregate(cell: &Cell, reps: &[Replication]) -> CellReport {
    let mut sorted: Vec<&Replication> = reps.iter().collect();
    sorted.sort_by_key(|r| r.index);
    let completed: Vec<&&Replication> = sorted
        .iter()
        .filter(|r| r.status == RepStatus::Completed)
        .collect();
    let infeasible_count = sorted.iter().filter(|r| r.status == RepStatus::Infeasible).count();
    let failure_count = sorted.iter().filter(|r| r.status == RepStatus::Failed).count();
    let nc = completed.len();
    let rate = |k: usize| (nc > 0).then(|| k as f64 / nc as f64);
    let se = |r: f64| (r * (1.0 - r) / nc as f64).sqrt();

    let rejections = completed
        .iter()
        .map(|r| r.reject)
        .collect::<Option<Vec<bool>>>()
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().filter(|&&b| b).count());
    let covered = completed
        .iter()
        .map(|r| r.covered)
        .collect::<Option<Vec<bool>>>()
        .filter(|v| !v.is_empty())
        .map(|v| v.iter().filter(|&&b| b).count());
    let rejection_rate = rejections.and_then(rate);
    let coverage = covered.and_then(rate);
    let lengths: Vec<f64> = completed.iter().filter_map(|r| r.ci_length).collect();
    let mean_ci_length =
        (!lengths.is_empty()).then(|| lengths.iter().sum::<f64>() / lengths.len() as f64);

    CellReport {
        design: cell.design.label(),
        n: cell.design.n,
        p: cell.design.p,
        s: cell.model.s,
        h: cell.model.h,
        signal: cell.model.signal,
        beta0: cell.beta0,
        replications: sorted.len(),
        completed: nc,
        infeasible_count,
        failure_count,
        rejections,
        rejection_rate,
        covered,
        coverage,
        se: rejection_rate.or(coverage).map(se),
        mean_ci_length,
        degenerate_count: completed.iter().filter(|r| r.degenerate_ci).count(),
        status: if nc == 0 {
            CellStatus::Failed
        } else if nc < sorted.len() {
            CellStatus::Partial
        } else {
            CellStatus::Ok
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Size,
    Power,
    Coverage,
}

/// Settings shared by all experiments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub pipeline: PipelineConfig,
    pub seed: u64,
    /// Per-coefficient magnitude; `None` means `3 / sqrt(p)`.
    pub signal: Option<f64>,
    pub tested_index: usize,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Free-form settings echoed into the JSON report.
    pub echo: BTreeMap<String, String>,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub reps: usize,
    pub procedure: Procedure,
    pub pipeline: PipelineConfig,
    pub config: BTreeMap<String, String>,
    pub cells: Vec<CellReport>,
}

fn model_for(design: &DesignSpec, s: usize, h: f64, sim: &SimulationConfig) -> ModelSpec {
    let mut m = ModelSpec::standard(design.p, s);
    if let Some(signal) = sim.signal {
        m.signal = signal;
    }
    m.h = h;
    m.tested_index = sim.tested_index;
    m
}

fn run_cells(
    kind: ExperimentKind,
    cells: Vec<Cell>,
    procedure: Procedure,
    reps: usize,
    sim: &SimulationConfig,
) -> Result<ExperimentReport> {
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    sim.pipeline.validate()?;
    for cell in &cells {
        cell.design.validate()?;
        cell.model.validate(cell.design.p)?;
    }
    let body = || -> Result<Vec<CellReport>> {
        cells
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                let reps = run_cell_replications(cell, &procedure, &sim.pipeline, reps, sim.seed, i as u64)?;
                Ok(aggregate(cell, &reps))
            })
            .collect()
    };
    let cell_reports = match sim.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(body)?,
        None => body()?,
    };
    Ok(ExperimentReport {
        experiment: kind,
        seed: sim.seed,
        reps,
        procedure,
        pipeline: sim.pipeline,
        config: sim.echo.clone(),
        cells: cell_reports,
    })
}

/// Rejection rates under the null `beta0 = true coefficient`, one cell per
/// (design, sparsity).
pub fn run_size_experiment(
    designs: &[DesignSpec],
    sparsities: &[usize],
    reps: usize,
    alpha: f64,
    sim: &SimulationConfig,
) -> Result<ExperimentReport> {
    let mut cells = Vec::new();
    for d in designs {
        for &s in sparsities {
            let model = model_for(d, s, 0.0, sim);
            cells.push(Cell {
                design: *d,
                model,
                beta0: model.beta(d.p)[model.tested_index],
            });
        }
    }
    run_cells(ExperimentKind::Size, cells, Procedure::Test { alpha }, reps, sim)
}

/// Rejection rates of `beta0 = beta_tested(h = 0)` when the tested
/// coefficient is shifted by each `h`.
pub fn run_power_experiment(
    design: &DesignSpec,
    s: usize,
    h_grid: &[f64],
    reps: usize,
    alpha: f64,
    sim: &SimulationConfig,
) -> Result<ExperimentReport> {
    if h_grid.is_empty() {
        return Err(Error::InvalidConfig("empty h grid".into()));
    }
    let null = model_for(design, s, 0.0, sim);
    let beta0 = null.beta(design.p)[null.tested_index];
    let cells = h_grid
        .iter()
        .map(|&h| Cell {
            design: *design,
            model: model_for(design, s, h, sim),
            beta0,
        })
        .collect();
    run_cells(ExperimentKind::Power, cells, Procedure::Test { alpha }, reps, sim)
}

/// Fraction of inverted intervals covering the true coefficient.
pub fn run_coverage_experiment(
    designs: &[DesignSpec],
    sparsities: &[usize],
    reps: usize,
    level: f64,
    grid: GridSpec,
    sim: &SimulationConfig,
) -> Result<ExperimentReport> {
    let mut cells = Vec::new();
    for d in designs {
        for &s in sparsities {
            let model = model_for(d, s, 0.0, sim);
            cells.push(Cell {
                design: *d,
                model,
                beta0: model.beta(d.p)[model.tested_index],
            });
        }
    }
    run_cells(
        ExperimentKind::Coverage,
        cells,
        Procedure::Interval { level, grid },
        reps,
        sim,
    )
}

fn opt_f(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_u(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn status_str(s: CellStatus) -> &'static str {
    match s {
        CellStatus::Ok => "ok",
        CellStatus::Partial => "partial",
        CellStatus::Failed => "failed",
    }
}

impl ExperimentReport {
    pub fn csv_header(&self) -> Vec<&'static str> {
        match self.experiment {
            ExperimentKind::Power => vec![
                "design", "s", "h", "reps", "power", "se", "n", "p", "completed", "infeasible",
                "failed", "rejections", "status",
            ],
            ExperimentKind::Size => vec![
                "design", "s", "h", "reps", "size", "se", "n", "p", "completed", "infeasible",
                "failed", "rejections", "status",
            ],
            ExperimentKind::Coverage => vec![
                "design", "s", "h", "reps", "coverage", "se", "n", "p", "completed", "infeasible",
                "failed", "covered", "mean_ci_length", "degenerate", "status",
            ],
        }
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .map(|c| {
                let mut row = vec![
                    c.design.clone(),
                    c.s.to_string(),
                    c.h.to_string(),
                    c.replications.to_string(),
                    opt_f(c.rejection_rate.or(c.coverage)),
                    opt_f(c.se),
                    c.n.to_string(),
                    c.p.to_string(),
                    c.completed.to_string(),
                    c.infeasible_count.to_string(),
                    c.failure_count.to_string(),
                ];
                match self.experiment {
                    ExperimentKind::Coverage => {
                        row.push(opt_u(c.covered));
                        row.push(opt_f(c.mean_ci_length));
                        row.push(c.degenerate_count.to_string());
                    }
                    _ => row.push(opt_u(c.rejections)),
                }
                row.push(status_str(c.status).to_string());
                row
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.csv_header())?;
        for row in self.csv_rows() {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width summary for terminals.
    pub fn summary_table(&self) -> String {
        let rate_name = match self.experiment {
            ExperimentKind::Size => "size",
            ExperimentKind::Power => "power",
            ExperimentKind::Coverage => "coverage",
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>5} {:>8} {:>9} {:>8} {:>9} {:>10} {:>8}",
            "design", "s", "h", rate_name, "se", "length", "completed", "status"
        );
        for c in &self.cells {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{:<24} {:>5} {:>8.4} {:>9} {:>8} {:>9} {:>10} {:>8}",
                c.design,
                c.s,
                c.h,
                fmt(c.rejection_rate.or(c.coverage)),
                fmt(c.se),
                fmt(c.mean_ci_length),
                format!("{}/{}", c.completed, c.replications),
                status_str(c.status)
            );
        }
        s
    }
}

/// Exact two-sided binomial band `[lo, hi]` for a proportion with `trials`
/// trials and success probability `prob`: the `(1-conf)/2` and `(1+conf)/2`
/// quantiles divided by `trials`.
pub fn binomial_band(trials: usize, prob: f64, conf: f64) -> Result<(f64, f64)> {
    if trials == 0 || !(0.0..=1.0).contains(&prob) || !(conf > 0.0 && conf < 1.0) {
        return Err(Error::InvalidInput("invalid binomial band arguments".into()));
    }
    let dist = Binomial::new(prob, trials as u64)
        .map_err(|e| Error::InvalidInput(format!("binomial: {e}")))?;
    let quantile = |q: f64| {
        (0..=trials as u64)
            .find(|&k| dist.cdf(k) >= q)
            .unwrap_or(trials as u64)
    };
    let t = trials as f64;
    Ok((
        quantile((1.0 - conf) / 2.0) as f64 / t,
        quantile((1.0 + conf) / 2.0) as f64 / t,
    ))
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `sample` and
/// the standard normal.
pub fn ks_statistic_normal(sample: &[f64]) -> f64 {
    let mut xs: Vec<f64> = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value `sqrt(-ln(alpha/2)/2) / sqrt(n)`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}
