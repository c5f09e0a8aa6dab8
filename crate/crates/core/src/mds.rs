//! Modified Dantzig selector.
//!
//! For a response `r` (length n) and design `D` (n x q) solve
//!
//! ```text
//! min ||theta||_1  over (theta, rho)
//!   s.t. ||D^T (r - D theta)||_inf <= eta * rho * sqrt(n) * ||r||_2
//!        r^T (r - D theta)        >= rho0 * rho * ||r||_2^2 / 2
//!        rho0 <= rho <= 1
//! ```
//!
//! as a linear program. Both constraint blocks are divided by their natural
//! scale (`eta sqrt(n) ||r||_2` and `||r||_2^2`), so the LP feasibility
//! tolerance acts as a relative tolerance on each constraint.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::LinearizedData;
use crate::lp::{solve_lp, LpBuilder, LpStatus, RowSense, VarBounds, DEFAULT_FEAS_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdsConfig {
    pub eta: f64,
    pub rho0: f64,
    pub feas_tol: f64,
}

impl MdsConfig {
    /// `eta = eta_scale * sqrt(ln p / n)`.
    pub fn from_scale(n: usize, p: usize, eta_scale: f64, rho0: f64) -> Self {
        MdsConfig {
            eta: eta_scale * ((p as f64).ln() / n as f64).sqrt(),
            rho0,
            feas_tol: DEFAULT_FEAS_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta = {}", self.eta)));
        }
        if !(self.rho0 > 0.0 && self.rho0 < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rho0 must lie in (0, 1), got {}",
                self.rho0
            )));
        }
        if !(self.feas_tol > 0.0) {
            return Err(Error::InvalidConfig(format!("feas_tol = {}", self.feas_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MdsStatus {
    Optimal,
    Infeasible,
    SolverFailure,
}

/// Result of one selector program. Numeric fields are only meaningful when
/// `status` is `Optimal`; otherwise they hold the trivial point
/// `coef = 0, residual = response`.
#[derive(Debug, Clone)]
pub struct MdsFit {
    pub coef: Array1<f64>,
    pub rho: f64,
    pub residual: Array1<f64>,
    pub sigma_hat: f64,
    pub l1_norm: f64,
    pub status: MdsStatus,
    pub lp_pivots: usize,
}

impl MdsFit {
    pub fn is_optimal(&self) -> bool {
        self.status == MdsStatus::Optimal
    }

    pub fn require_optimal(&self) -> Result<()> {
        match self.status {
            MdsStatus::Optimal => Ok(()),
            MdsStatus::Infeasible => Err(Error::Infeasible),
            MdsStatus::SolverFailure => Err(Error::SolverFailure("selector LP".into())),
        }
    }
}

/// Constraint slack of a candidate `(coef, rho)`, in the same relative units
/// the solver uses. Positive values are violations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MdsFeasibility {
    pub correlation_violation: f64,
    pub energy_violation: f64,
    pub rho_violation: f64,
}

impl MdsFeasibility {
    pub fn max(&self) -> f64 {
        self.correlation_violation
            .max(self.energy_violation)
            .max(self.rho_violation)
    }
}

/// Recomputes both selector constraints from scratch for `(coef, rho)`.
pub fn check_feasibility(
    response: ArrayView1<f64>,
    design: ArrayView2<f64>,
    coef: ArrayView1<f64>,
    rho: f64,
    cfg: &MdsConfig,
) -> MdsFeasibility {
    let n = response.len() as f64;
    let norm_sq = response.dot(&response);
    let norm = norm_sq.sqrt();
    let resid = &response - &design.dot(&coef);
    let corr = design.t().dot(&resid);
    let bound = cfg.eta * rho * n.sqrt() * norm;
    let scale = cfg.eta * n.sqrt() * norm;
    let worst = corr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let energy = response.dot(&resid);
    MdsFeasibility {
        correlation_violation: (worst - bound) / scale,
        energy_violation: (cfg.rho0 * rho * norm_sq / 2.0 - energy) / norm_sq,
        rho_violation: (cfg.rho0 - rho).max(rho - 1.0),
    }
}

/// Residual-energy diagnostic `||residual||^2 / ((rho0^2 / 4) n sigma^2)`
/// with the plug-in noise scale `sigma = rho ||response|| / sqrt(n)`.
/// Values below one flag a residual that is small relative to the implied
/// noise level. Logged, never enforced.
pub fn energy_ratio(fit: &MdsFit, response: ArrayView1<f64>, rho0: f64) -> f64 {
    let ss = fit.residual.dot(&fit.residual);
    let implied = fit.rho * fit.rho * response.dot(&response);
    ss / (rho0 * rho0 / 4.0 * implied)
}

pub fn solve_mds(
    response: ArrayView1<f64>,
    design: ArrayView2<f64>,
    cfg: &MdsConfig,
) -> Result<MdsFit> {
    cfg.validate()?;
    let (n, q) = design.dim();
    if response.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "response has {} entries, design has {n} rows",
            response.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!("need n >= 2, got {n}")));
    }
    let norm_sq = response.dot(&response);
    if !(norm_sq > 0.0) || !norm_sq.is_finite() {
        return Err(Error::InvalidInput(
            "selector response must have positive finite norm".into(),
        ));
    }
    let norm = norm_sq.sqrt();
    let gram = design.t().dot(&design);
    let corr0 = design.t().dot(&response);
    let scale = cfg.eta * (n as f64).sqrt() * norm;

    let mut lp = LpBuilder::new();
    for _ in 0..q {
        lp.add_l1_var(1.0);
    }
    let rho = lp.add_var(0.0, VarBounds::between(cfg.rho0, 1.0));
    for j in 0..q {
        // (g - G theta)_j <= s rho   <=>   -G_j theta / s - rho <= -g_j / s
        let mut upper = vec![0.0; q + 1];
        let mut lower = vec![0.0; q + 1];
        for l in 0..q {
            upper[l] = -gram[[j, l]] / scale;
            lower[l] = gram[[j, l]] / scale;
        }
        upper[rho] = -1.0;
        lower[rho] = -1.0;
        lp.add_row(upper, RowSense::Le, -corr0[j] / scale);
        lp.add_row(lower, RowSense::Le, corr0[j] / scale);
    }
    // r^T r - g^T theta >= rho0 rho ||r||^2 / 2
    let mut energy = vec![0.0; q + 1];
    for l in 0..q {
        energy[l] = corr0[l] / norm_sq;
    }
    energy[rho] = cfg.rho0 / 2.0;
    lp.add_row(energy, RowSense::Le, 1.0);

    let std = lp.build()?;
    let sol = solve_lp(&std.problem, cfg.feas_tol)?;
    let status = match sol.status {
        LpStatus::Optimal => MdsStatus::Optimal,
        LpStatus::Infeasible => MdsStatus::Infeasible,
        // The objective is bounded below by zero, so an unbounded verdict is
        // itself a numerical failure.
        LpStatus::Unbounded | LpStatus::NumericalFailure => MdsStatus::SolverFailure,
    };
    if status != MdsStatus::Optimal {
        return Ok(MdsFit {
            coef: Array1::zeros(q),
            rho: cfg.rho0,
            residual: response.to_owned(),
            sigma_hat: norm / (n as f64).sqrt(),
            l1_norm: 0.0,
            status,
            lp_pivots: sol.pivots,
        });
    }
    let vars = std.recover(&sol.x);
    let coef = vars.slice(ndarray::s![..q]).to_owned();
    // The shift back from the standard form can leave rho an ulp outside.
    let rho_value = vars[rho].clamp(cfg.rho0, 1.0);
    let residual = &response - &design.dot(&coef);
    let sigma_hat = residual.dot(&residual).sqrt() / (n as f64).sqrt();
    Ok(MdsFit {
        l1_norm: coef.iter().map(|v| v.abs()).sum(),
        coef,
        rho: rho_value,
        residual,
        sigma_hat,
        status,
        lp_pivots: sol.pivots,
    })
}

/// Nuisance fit of `V` on `W`; `sigma_hat` is the residual scale used to
/// normalize the test statistic.
pub fn fit_theta(ld: &LinearizedData, cfg: &MdsConfig) -> Result<MdsFit> {
    let fit = solve_mds(ld.v.view(), ld.w.view(), cfg)?;
    if fit.is_optimal() && !(fit.sigma_hat > 0.0) {
        return Err(Error::DegenerateNormalization(
            "nuisance residual scale is zero".into(),
        ));
    }
    Ok(fit)
}

/// Decoupling fit of `Z` on `W`; its residual drives the variance estimate.
pub fn fit_pi(ld: &LinearizedData, cfg: &MdsConfig) -> Result<MdsFit> {
    solve_mds(ld.z.view(), ld.w.view(), cfg)
}

/// Convenience for tests and tooling that hold raw matrices.
pub fn design_from_columns(columns: &[Vec<f64>]) -> Array2<f64> {
    let n = columns.first().map_or(0, |c| c.len());
    Array2::from_shape_fn((n, columns.len()), |(i, j)| columns[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(eta: f64) -> MdsConfig {
        MdsConfig {
            eta,
            rho0: 0.01,
            feas_tol: DEFAULT_FEAS_TOL,
        }
    }

    #[test]
    fn zero_response_rejected() {
        let d = Array2::from_elem((4, 2), 1.0);
        let r = Array1::zeros(4);
        assert!(matches!(
            solve_mds(r.view(), d.view(), &cfg(0.5)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn orthogonal_design_gives_zero() {
        let r = array![1.0, 1.0, 0.0, 0.0];
        let d = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        for eta in [1e-3, 0.5, 10.0] {
            let fit = solve_mds(r.view(), d.view(), &cfg(eta)).unwrap();
            assert!(fit.is_optimal());
            assert_eq!(fit.l1_norm, 0.0);
            assert_eq!(fit.residual, r);
            assert!(fit.rho >= 0.01 && fit.rho <= 1.0);
        }
    }

    #[test]
    fn zero_design_theta_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0));
        let ld = LinearizedData {
            v: v.clone(),
            z: Array1::from_elem(6, 1.0),
            w: Array2::zeros((6, 3)),
            beta0: 0.0,
            y_new: v.clone(),
            tested_index: 0,
        };
        let fit = fit_theta(&ld, &cfg(0.3)).unwrap();
        assert!(fit.is_optimal());
        assert_eq!(fit.l1_norm, 0.0);
        let expected = v.dot(&v).sqrt() / 6f64.sqrt();
        assert!((fit.sigma_hat - expected).abs() < 1e-15);

        let pi = fit_pi(&ld, &cfg(0.3)).unwrap();
        let q_hat = pi.residual.dot(&pi.residual) / 6.0;
        assert!((q_hat - 1.0).abs() < 1e-15);
    }

    #[test]
    fn doubling_response_doubles_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = Array2::from_shape_fn((12, 5), |_| rng.gen_range(-1.0..1.0));
        let r = Array1::from_shape_fn(12, |_| rng.gen_range(-1.0..1.0)) + d.column(0);
        let c = cfg(0.1);
        let a = solve_mds(r.view(), d.view(), &c).unwrap();
        let r2 = &r * 2.0;
        let b = solve_mds(r2.view(), d.view(), &c).unwrap();
        assert!(a.is_optimal() && b.is_optimal());
        assert!(a.l1_norm > 0.0);
        assert!((b.l1_norm - 2.0 * a.l1_norm).abs() < 1e-8);
    }

    #[test]
    fn returned_fits_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = Array2::from_shape_fn((15, 8), |_| rng.gen_range(-1.0..1.0));
            let r = Array1::from_shape_fn(15, |_| rng.gen_range(-1.0..1.0));
            let c = cfg(rng.gen_range(0.01..0.5));
            let fit = solve_mds(r.view(), d.view(), &c).unwrap();
            assert!(fit.is_optimal());
            let check = check_feasibility(r.view(), d.view(), fit.coef.view(), fit.rho, &c);
            assert!(check.max() <= c.feas_tol, "{check:?}");
            assert!((fit.l1_norm - fit.coef.iter().map(|v| v.abs()).sum::<f64>()).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_config() {
        let d = Array2::from_elem((4, 2), 1.0);
        let r = array![1.0, 0.0, 0.0, 0.0];
        let bad = MdsConfig { rho0: 1.0, ..cfg(0.5) };
        assert!(solve_mds(r.view(), d.view(), &bad).is_err());
        let bad = MdsConfig { eta: 0.0, ..cfg(0.5) };
        assert!(solve_mds(r.view(), d.view(), &bad).is_err());
    }

    #[test]
    fn energy_ratio_plug_in() {
        let r = array![1.0, -2.0, 0.5, 0.0];
        let d = array![[1.0], [0.0], [0.0], [0.0]];
        let fit = solve_mds(r.view(), d.view(), &cfg(10.0)).unwrap();
        // Orthogonal-enough geometry: zero fit, residual equals response.
        assert_eq!(fit.l1_norm, 0.0);
        let expected = 1.0 / (0.01f64.powi(2) / 4.0 * fit.rho * fit.rho);
        assert!((energy_ratio(&fit, r.view(), 0.01) - expected).abs() < 1e-6 * expected);
    }
}
