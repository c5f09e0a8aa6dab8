//! Test statistic, decision rule and confidence intervals by test inversion.
//!
//! The pipeline splits the data, fits the L1-penalized pilot on the first
//! half, linearizes the model on the second half, runs the two selector
//! programs and forms
//!
//! ```text
//! T_n   = n^{-1/2} sigma_e^{-1} (Z - W pi)^T (V - W theta)
//! Q_hat = ||Z - W pi||^2 / n
//! ```
//!
//! rejecting when `|T_n| > sqrt(Q_hat) * Phi^{-1}(1 - alpha / 2)`.

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result, Stage};
use crate::lasso::{default_lambda, fit_logistic_lasso, LassoConfig, LassoFit};
use crate::linearize::{linearize, rebuild_v, LinearizedData};
use crate::lp::DEFAULT_FEAS_TOL;
use crate::mds::{fit_pi, fit_theta, MdsConfig, MdsFit, MdsStatus};
use crate::model::{split_samples, Dataset};

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse standard normal CDF: Acklam's rational approximation followed
/// by one Halley step against `erfc`.
pub fn normal_quantile(q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidInput(format!(
            "quantile level must lie in (0, 1), got {q}"
        )));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const LOW: f64 = 0.02425;

    let tail = |t: f64| {
        let r = (-2.0 * t.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    };
    let x = if q < LOW {
        tail(q)
    } else if q > 1.0 - LOW {
        -tail(1.0 - q)
    } else {
        let s = q - 0.5;
        let r = s * s;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * s
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // Halley refinement. Work in the lower tail for accuracy.
    let refine = |x: f64, target: f64| {
        let e = normal_cdf(x) - target;
        let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
        x - u / (1.0 + x * u / 2.0)
    };
    Ok(if q > 0.5 {
        -refine(-x, 1.0 - q)
    } else {
        refine(x, q)
    })
}

/// Per-run record of what the fitted programs looked like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDiagnostics {
    pub theta_status: MdsStatus,
    pub pi_status: MdsStatus,
    pub sigma_e: f64,
    pub theta_rho: f64,
    pub pi_rho: f64,
    pub theta_l1: f64,
    pub pi_l1: f64,
    pub n_inference: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub t_n: f64,
    pub q_hat: f64,
    pub z_score: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub beta0: f64,
    pub critical_value: f64,
    pub diagnostics: TestDiagnostics,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Forms the statistic from two optimal selector fits.
pub fn test_statistic(
    ld: &LinearizedData,
    theta_fit: &MdsFit,
    pi_fit: &MdsFit,
    alpha: f64,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    theta_fit.require_optimal()?;
    pi_fit.require_optimal()?;
    let n = ld.n();
    if theta_fit.residual.len() != n || pi_fit.residual.len() != n {
        return Err(Error::DimensionMismatch(
            "fit residuals do not match the linearized data".into(),
        ));
    }
    let nf = n as f64;
    let sigma_e = theta_fit.sigma_hat;
    let q_hat = pi_fit.residual.dot(&pi_fit.residual) / nf;
    if !(sigma_e > 0.0) {
        return Err(Error::DegenerateNormalization("sigma_e = 0".into()));
    }
    if !(q_hat > 0.0) {
        return Err(Error::DegenerateNormalization("Q_hat = 0".into()));
    }
    let t_n = pi_fit.residual.dot(&theta_fit.residual) / (nf.sqrt() * sigma_e);
    let critical_value = normal_quantile(1.0 - alpha / 2.0)?;
    let z_score = t_n / q_hat.sqrt();
    let outcome = TestOutcome {
        t_n,
        q_hat,
        z_score,
        p_value: erfc(z_score.abs() / std::f64::consts::SQRT_2),
        reject: t_n.abs() > q_hat.sqrt() * critical_value,
        alpha,
        beta0: ld.beta0,
        critical_value,
        diagnostics: TestDiagnostics {
            theta_status: theta_fit.status,
            pi_status: pi_fit.status,
            sigma_e,
            theta_rho: theta_fit.rho,
            pi_rho: pi_fit.rho,
            theta_l1: theta_fit.l1_norm,
            pi_l1: pi_fit.l1_norm,
            n_inference: n,
        },
    };
    if !(outcome.t_n.is_finite() && outcome.p_value.is_finite()) {
        return Err(Error::NonFinite("test statistic".into()));
    }
    Ok(outcome)
}

/// Tuning shared by every stage of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub split_fraction: f64,
    pub split_seed: u64,
    /// Pilot penalty is `lambda_scale * sqrt(ln p / n1)`.
    pub lambda_scale: f64,
    /// Selector tuning is `eta_scale * sqrt(ln p / n2)`.
    pub eta_scale: f64,
    pub rho0: f64,
    pub feas_tol: f64,
    pub lasso_tol: f64,
    pub lasso_max_iters: usize,
    pub lasso_accelerate: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            split_fraction: 0.5,
            split_seed: 0,
            lambda_scale: 1.0,
            eta_scale: 0.5,
            rho0: 0.01,
            feas_tol: DEFAULT_FEAS_TOL,
            lasso_tol: 1e-7,
            lasso_max_iters: 10_000,
            lasso_accelerate: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split fraction must lie in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if !(self.lambda_scale >= 0.0 && self.lambda_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda scale = {}",
                self.lambda_scale
            )));
        }
        if !(self.eta_scale > 0.0 && self.eta_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta scale = {}", self.eta_scale)));
        }
        if !(self.rho0 > 0.0 && self.rho0 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rho0 must lie in (0, 1), got {}",
                self.rho0
            )));
        }
        if !(self.feas_tol > 0.0 && self.lasso_tol > 0.0) || self.lasso_max_iters == 0 {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Everything that does not depend on the hypothesized value: the split,
/// pilot fit, linearization and decoupling fit. Cheap to query repeatedly
/// at different `beta0`.
#[derive(Debug, Clone)]
pub struct PreparedInference {
    pub tested_index: usize,
    pub pilot: LassoFit,
    pub lambda: f64,
    pub linearized: LinearizedData,
    pub pi_fit: MdsFit,
    pub mds: MdsConfig,
    pub n_estimation: usize,
    pub p: usize,
}

pub fn prepare(ds: &Dataset, tested_index: usize, cfg: &PipelineConfig) -> Result<PreparedInference> {
    cfg.validate()?;
    let p = ds.p();
    if tested_index >= p {
        return Err(Error::InvalidInput(format!(
            "tested index {tested_index} out of range for p={p}"
        )));
    }
    let split = split_samples(ds, cfg.split_fraction, cfg.split_seed).map_err(|e| e.at(Stage::Split))?;
    let n1 = split.d1.n();
    let n2 = split.d2.n();
    let lambda = default_lambda(n1, p, cfg.lambda_scale);
    let lasso_cfg = LassoConfig {
        lambda,
        max_iters: cfg.lasso_max_iters,
        tol: cfg.lasso_tol,
        step_init: 1.0,
        accelerate: cfg.lasso_accelerate,
    };
    let pilot = fit_logistic_lasso(&split.d1, &lasso_cfg).map_err(|e| e.at(Stage::Lasso))?;
    let linearized = linearize(&split.d2, pilot.beta_hat.view(), tested_index, 0.0)
        .map_err(|e| e.at(Stage::Linearize))?;
    let mds = MdsConfig {
        feas_tol: cfg.feas_tol,
        ..MdsConfig::from_scale(n2, p, cfg.eta_scale, cfg.rho0)
    };
    let pi_fit = fit_pi(&linearized, &mds).map_err(|e| e.at(Stage::PiFit))?;
    pi_fit.require_optimal().map_err(|e| e.at(Stage::PiFit))?;
    Ok(PreparedInference {
        tested_index,
        pilot,
        lambda,
        linearized,
        pi_fit,
        mds,
        n_estimation: n1,
        p,
    })
}

impl PreparedInference {
    pub fn pilot_estimate(&self) -> f64 {
        self.pilot.beta_hat[self.tested_index]
    }

    pub fn n_inference(&self) -> usize {
        self.linearized.n()
    }

    /// `sqrt(ln p / n2)`, the natural width unit for the default grid.
    pub fn rate(&self) -> f64 {
        ((self.p as f64).ln() / self.n_inference() as f64).sqrt()
    }

    pub fn test(&self, beta0: f64, alpha: f64) -> Result<TestOutcome> {
        check_alpha(alpha)?;
        let ld = rebuild_v(&self.linearized, beta0);
        let theta = fit_theta(&ld, &self.mds).map_err(|e| e.at(Stage::ThetaFit))?;
        theta.require_optimal().map_err(|e| e.at(Stage::ThetaFit))?;
        test_statistic(&ld, &theta, &self.pi_fit, alpha).map_err(|e| e.at(Stage::Statistic))
    }
}

/// Split, pilot fit, linearize, selector fits and statistic in one call.
pub fn run_test(
    ds: &Dataset,
    tested_index: usize,
    beta0: f64,
    alpha: f64,
    cfg: &PipelineConfig,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    prepare(ds, tested_index, cfg)?.test(beta0, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 3 || !(self.lo < self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "grid needs lo < hi and at least 3 steps, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| {
                if i == self.steps - 1 {
                    self.hi
                } else {
                    self.lo + step * i as f64
                }
            })
            .collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.steps - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    Explicit(Grid),
    /// `pilot +/- half_width_scale * sqrt(ln p / n2)`.
    AroundPilot { half_width_scale: f64, steps: usize },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::AroundPilot {
            half_width_scale: 10.0,
            steps: 81,
        }
    }
}

impl GridSpec {
    pub fn resolve(&self, prepared: &PreparedInference) -> Result<Grid> {
        let grid = match *self {
            GridSpec::Explicit(g) => g,
            GridSpec::AroundPilot {
                half_width_scale,
                steps,
            } => {
                let centre = prepared.pilot_estimate();
                let half = half_width_scale * prepared.rate();
                Grid {
                    lo: centre - half,
                    hi: centre + half,
                    steps,
                }
            }
        };
        grid.validate()?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub beta0: f64,
    pub z_score: Option<f64>,
    pub accepted: bool,
    /// Set when the test could not be formed at this point.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    /// `None` when no grid point is accepted.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub level: f64,
    pub grid: Grid,
    pub point_estimate: f64,
    pub contains_point_estimate: bool,
    pub degenerate: bool,
    /// The accepted set reaches the first or last grid point, so the true
    /// acceptance region may extend past the grid.
    pub hits_grid_edge: bool,
    pub failed_points: usize,
    pub points: Vec<GridPoint>,
}

impl ConfidenceInterval {
    pub fn covers(&self, value: f64) -> bool {
        match (self.lower, self.upper) {
            (Some(lo), Some(hi)) => lo <= value && value <= hi,
            _ => false,
        }
    }

    pub fn length(&self) -> Option<f64> {
        Some(self.upper? - self.lower?)
    }
}

impl PreparedInference {
    /// Inverts the test over `grid`; grid points are evaluated in parallel.
    pub fn confidence_interval(&self, level: f64, grid: &GridSpec) -> Result<ConfidenceInterval> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "level must lie in (0, 1), got {level}"
            )));
        }
        let alpha = 1.0 - level;
        let grid = grid.resolve(self)?;
        let points: Vec<GridPoint> = grid
            .points()
            .into_par_iter()
            .map(|beta0| match self.test(beta0, alpha) {
                Ok(out) => GridPoint {
                    beta0,
                    z_score: Some(out.z_score),
                    accepted: !out.reject,
                    error: None,
                },
                Err(e) => GridPoint {
                    beta0,
                    z_score: None,
                    accepted: false,
                    error: Some(e.to_string()),
                },
            })
            .collect();
        let accepted: Vec<usize> = points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.accepted)
            .map(|(i, _)| i)
            .collect();
        let failed_points = points.iter().filter(|p| p.error.is_some()).count();
        let point_estimate = self.pilot_estimate();
        let (lower, upper, hits_grid_edge) = match (accepted.first(), accepted.last()) {
            (Some(&a), Some(&b)) => (
                Some(points[a].beta0),
                Some(points[b].beta0),
                a == 0 || b == points.len() - 1,
            ),
            _ => (None, None, false),
        };
        let mut ci = ConfidenceInterval {
            lower,
            upper,
            level,
            grid,
            point_estimate,
            contains_point_estimate: false,
            degenerate: accepted.is_empty(),
            hits_grid_edge,
            failed_points,
            points,
        };
        ci.contains_point_estimate = ci.covers(point_estimate);
        Ok(ci)
    }
}

pub fn confidence_interval(
    ds: &Dataset,
    tested_index: usize,
    level: f64,
    grid: &GridSpec,
    cfg: &PipelineConfig,
) -> Result<ConfidenceInterval> {
    prepare(ds, tested_index, cfg)?.confidence_interval(level, grid)
}

/// Decision rule re-expressed through the p-value.
pub fn rejects_by_p_value(outcome: &TestOutcome) -> bool {
    outcome.p_value < outcome.alpha
}

/// Statistic at a new `beta0` with the nuisance fit frozen. Used to check the
/// linear dependence of `T_n` on the hypothesized value.
pub fn statistic_with_frozen_fits(
    ld: &LinearizedData,
    theta_coef: &Array1<f64>,
    sigma_e: f64,
    pi_residual: &Array1<f64>,
    beta0: f64,
) -> f64 {
    let v = rebuild_v(ld, beta0).v;
    let resid = &v - &ld.w.dot(theta_coef);
    pi_residual.dot(&resid) / ((ld.n() as f64).sqrt() * sigma_e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mds::MdsStatus;
    use ndarray::{array, Array2};

    fn fake_fit(residual: Array1<f64>) -> MdsFit {
        let n = residual.len() as f64;
        MdsFit {
            coef: Array1::zeros(1),
            rho: 0.5,
            sigma_hat: residual.dot(&residual).sqrt() / n.sqrt(),
            l1_norm: 0.0,
            residual,
            status: MdsStatus::Optimal,
            lp_pivots: 0,
        }
    }

    fn fake_ld(n: usize) -> LinearizedData {
        LinearizedData {
            v: Array1::ones(n),
            z: Array1::ones(n),
            w: Array2::zeros((n, 1)),
            beta0: 0.0,
            y_new: Array1::ones(n),
            tested_index: 0,
        }
    }

    #[test]
    fn quantile_values() {
        assert!(normal_quantile(0.5).unwrap().abs() < 1e-15);
        assert!((normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-6);
        let a = normal_quantile(0.9).unwrap();
        let b = normal_quantile(0.1).unwrap();
        assert!((a + b).abs() < 1e-12);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn orthogonal_residuals_never_reject() {
        let ld = fake_ld(4);
        let theta = fake_fit(array![1.0, -1.0, 0.0, 0.0]);
        let pi = fake_fit(array![0.0, 0.0, 1.0, 1.0]);
        for alpha in [0.01, 0.05, 0.5, 0.99] {
            let out = test_statistic(&ld, &theta, &pi, alpha).unwrap();
            assert_eq!(out.t_n, 0.0);
            assert!(!out.reject);
        }
    }

    #[test]
    fn identical_residuals_collapse() {
        let e = array![0.5, -1.0, 2.0, 0.25, 1.0];
        let ld = fake_ld(5);
        let theta = fake_fit(e.clone());
        let pi = fake_fit(e.clone());
        let out = test_statistic(&ld, &theta, &pi, 0.05).unwrap();
        let n = 5f64;
        let sigma = theta.sigma_hat;
        assert!((out.t_n - n.sqrt() * sigma).abs() < 1e-12);
        assert!((out.z_score - n.sqrt() * sigma / out.q_hat.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn decision_at_three() {
        // t_n = 3, q_hat = 1 with alpha = 0.05 rejects (3 > 1.95996).
        let crit = normal_quantile(0.975).unwrap();
        assert!(3.0 > crit);
        let n = 9usize;
        let mut u = Array1::zeros(n);
        u[0] = 3.0; // q_hat = 9 / 9 = 1
        let mut e = Array1::zeros(n);
        e[0] = 3.0; // sigma_e = 1, t_n = 9 / (3 * 1) = 3
        let out = test_statistic(&fake_ld(n), &fake_fit(e), &fake_fit(u), 0.05).unwrap();
        assert!((out.t_n - 3.0).abs() < 1e-12);
        assert!((out.q_hat - 1.0).abs() < 1e-12);
        assert!(out.reject);
        assert_eq!(out.reject, rejects_by_p_value(&out));
    }

    #[test]
    fn degenerate_normalization() {
        let ld = fake_ld(3);
        let zero = fake_fit(Array1::zeros(3));
        let ok = fake_fit(array![1.0, 0.0, 0.0]);
        assert!(matches!(
            test_statistic(&ld, &zero, &ok, 0.05),
            Err(Error::DegenerateNormalization(_))
        ));
        assert!(matches!(
            test_statistic(&ld, &ok, &zero, 0.05),
            Err(Error::DegenerateNormalization(_))
        ));
        let mut infeasible = ok.clone();
        infeasible.status = MdsStatus::Infeasible;
        assert!(test_statistic(&ld, &infeasible, &ok, 0.05).unwrap_err().is_infeasible());
    }

    #[test]
    fn grid_points_and_validation() {
        let g = Grid { lo: -1.0, hi: 1.0, steps: 5 };
        assert_eq!(g.points(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(Grid { lo: 1.0, hi: 0.0, steps: 5 }.validate().is_err());
        assert!(Grid { lo: 0.0, hi: 1.0, steps: 2 }.validate().is_err());
    }

    #[test]
    fn p_value_matches_decision() {
        for z in [-3.0, -1.96, -0.5, 0.0, 1.0, 1.9599, 1.96, 2.5] {
            let p = erfc(f64::abs(z) / std::f64::consts::SQRT_2);
            let crit = normal_quantile(0.975).unwrap();
            if f64::abs(z) > crit + 1e-9 {
                assert!(p < 0.05);
            } else if f64::abs(z) < crit - 1e-9 {
                assert!(p > 0.05);
            }
        }
    }
}
