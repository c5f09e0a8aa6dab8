//! L1-penalized logistic regression by proximal gradient descent.
//!
//! Minimizes `nll(beta) + lambda * ||beta||_1` from `beta = 0` using ISTA
//! steps with a backtracking line search. Optionally, momentum (FISTA) is
//! applied with a monotone restart so accepted objectives still never rise.

use ndarray::{Array1, ArrayView1, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{nll_from_linear_predictor, score, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub step_init: f64,
    pub accelerate: bool,
}

impl LassoConfig {
    pub fn new(lambda: f64) -> Self {
        LassoConfig {
            lambda,
            max_iters: 10_000,
            tol: 1e-7,
            step_init: 1.0,
            accelerate: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda = {}", self.lambda)));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 || !(self.step_init > 0.0) {
            return Err(Error::InvalidConfig(
                "lasso needs tol > 0, max_iters >= 1 and step_init > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub beta_hat: Array1<f64>,
    pub objective: f64,
    pub iters: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    /// Penalized objective at every accepted iterate, starting from zero.
    pub history: Vec<f64>,
}

/// `scale * sqrt(ln p / n)`.
pub fn default_lambda(n: usize, p: usize, scale: f64) -> f64 {
    scale * ((p as f64).ln() / n as f64).sqrt()
}

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Largest violation of the lasso optimality conditions given the gradient
/// of the smooth part.
pub fn kkt_residual(beta: ArrayView1<f64>, grad: ArrayView1<f64>, lambda: f64) -> f64 {
    beta.iter()
        .zip(grad.iter())
        .map(|(&b, &g)| {
            if b == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g + lambda * b.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn penalized_objective(ds: &Dataset, beta: ArrayView1<f64>, lambda: f64) -> Result<f64> {
    let nll = crate::model::neg_log_likelihood(ds, beta)?;
    Ok(nll + lambda * l1(beta))
}

fn l1(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

struct Point {
    beta: Array1<f64>,
    eta: Array1<f64>,
    smooth: f64,
}

impl Point {
    fn at(ds: &Dataset, beta: Array1<f64>) -> Point {
        let eta = ds.x().dot(&beta);
        let smooth = nll_from_linear_predictor(eta.view(), ds.y().view());
        Point { beta, eta, smooth }
    }

    fn objective(&self, lambda: f64) -> f64 {
        self.smooth + lambda * l1(self.beta.view())
    }

    fn gradient(&self, ds: &Dataset) -> Array1<f64> {
        score(ds.x(), ds.y().view(), self.eta.view())
    }
}

/// One backtracked proximal step from `from`. Returns the new point and the
/// step size that satisfied the sufficient-decrease condition.
fn prox_step(
    ds: &Dataset,
    from: &Point,
    grad: &Array1<f64>,
    lambda: f64,
    mut step: f64,
) -> Result<(Point, f64)> {
    loop {
        let mut cand = Array1::zeros(from.beta.len());
        Zip::from(&mut cand)
            .and(&from.beta)
            .and(grad)
            .for_each(|c, &b, &g| *c = soft_threshold(b - step * g, step * lambda));
        let next = Point::at(ds, cand);
        if !next.smooth.is_finite() {
            return Err(Error::NonFinite("lasso objective".into()));
        }
        let diff = &next.beta - &from.beta;
        let model = from.smooth + grad.dot(&diff) + diff.dot(&diff) / (2.0 * step);
        if next.smooth <= model + 1e-15 * from.smooth.abs().max(1.0) {
            return Ok((next, step));
        }
        step *= 0.5;
        if step < 1e-20 {
            return Err(Error::SolverFailure(
                "lasso line search collapsed".into(),
            ));
        }
    }
}

pub fn fit_logistic_lasso(ds: &Dataset, cfg: &LassoConfig) -> Result<LassoFit> {
    cfg.validate()?;
    let lambda = cfg.lambda;
    let mut current = Point::at(ds, Array1::zeros(ds.p()));
    let mut objective = current.objective(lambda);
    if !objective.is_finite() {
        return Err(Error::NonFinite("lasso objective".into()));
    }
    let mut history = vec![objective];
    let mut grad = current.gradient(ds);
    let mut kkt = kkt_residual(current.beta.view(), grad.view(), lambda);
    let mut step = cfg.step_init;

    // FISTA state.
    let mut previous_beta = current.beta.clone();
    let mut momentum = 1.0f64;

    let mut iters = 0;
    while kkt > cfg.tol && iters < cfg.max_iters {
        iters += 1;
        let trial_step = step * 1.25;
        let accepted = if cfg.accelerate && iters > 1 {
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let weight = (momentum - 1.0) / next_momentum;
            let extrapolated = &current.beta + &((&current.beta - &previous_beta) * weight);
            let y = Point::at(ds, extrapolated);
            let gy = y.gradient(ds);
            let (cand, used) = prox_step(ds, &y, &gy, lambda, trial_step)?;
            if cand.objective(lambda) <= objective {
                momentum = next_momentum;
                Some((cand, used))
            } else {
                momentum = 1.0;
                None
            }
        } else {
            None
        };
        let (next, used) = match accepted {
            Some(pair) => pair,
            None => prox_step(ds, &current, &grad, lambda, trial_step)?,
        };
        step = used;
        previous_beta = std::mem::replace(&mut current, next).beta;
        objective = current.objective(lambda);
        history.push(objective);
        grad = current.gradient(ds);
        kkt = kkt_residual(current.beta.view(), grad.view(), lambda);
    }

    Ok(LassoFit {
        converged: kkt <= cfg.tol,
        beta_hat: current.beta,
        objective,
        iters,
        kkt_residual: kkt,
        history,
    })
}
