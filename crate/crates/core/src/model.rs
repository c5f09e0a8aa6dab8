//! Logistic model kernels and the data containers shared by every stage.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Design matrix and binary response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
}

impl Dataset {
    /// Validates shape, finiteness and that every response is exactly 0 or 1.
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let (n, p) = x.dim();
        if y.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "x has {n} rows but y has {} entries",
                y.len()
            )));
        }
        if n < 2 || p < 2 {
            return Err(Error::InvalidInput(format!(
                "need n >= 2 and p >= 2, got n={n}, p={p}"
            )));
        }
        if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("x[{i}, {j}]")));
        }
        if let Some((i, v)) = y.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput(format!(
                "response at row {i} is {v}, expected 0 or 1"
            )));
        }
        Ok(Dataset { x, y })
    }

    /// Constructor that skips the n, p >= 2 shape floor. Used for tiny
    /// analytic instances; still rejects non-binary or non-finite data.
    pub fn new_unchecked_shape(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "x has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("x".into()));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("response must be 0 or 1".into()));
        }
        Ok(Dataset { x, y })
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
        }
    }

    fn check_beta(&self, beta: ArrayView1<f64>) -> Result<()> {
        if beta.len() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "beta has length {} but the design has {} columns",
                beta.len(),
                self.p()
            )));
        }
        Ok(())
    }
}

/// Estimation half `d1` and inference half `d2` of a dataset.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub d1: Dataset,
    pub d2: Dataset,
    pub d1_rows: Vec<usize>,
    pub d2_rows: Vec<usize>,
    pub split_seed: u64,
}

/// Coefficient vector viewed as a tested coordinate plus nuisance block.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub beta_star: f64,
    pub theta_star: Array1<f64>,
    pub tested_index: usize,
}

impl Coefficients {
    pub fn from_beta(beta: ArrayView1<f64>, tested_index: usize) -> Result<Self> {
        if tested_index >= beta.len() {
            return Err(Error::InvalidInput(format!(
                "tested index {tested_index} out of range for p={}",
                beta.len()
            )));
        }
        let theta_star = beta
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != tested_index)
            .map(|(_, &b)| b)
            .collect();
        Ok(Coefficients {
            beta_star: beta[tested_index],
            theta_star,
            tested_index,
        })
    }

    pub fn to_beta(&self) -> Array1<f64> {
        let p = self.theta_star.len() + 1;
        let mut beta = Array1::zeros(p);
        let mut it = self.theta_star.iter();
        for j in 0..p {
            beta[j] = if j == self.tested_index {
                self.beta_star
            } else {
                *it.next().unwrap()
            };
        }
        beta
    }
}

/// Logistic function `e^u / (1 + e^u)`, evaluated without overflow.
#[inline]
pub fn sigmoid(u: f64) -> f64 {
    let e = (-u.abs()).exp();
    let denom = 1.0 + e;
    if u >= 0.0 {
        1.0 / denom
    } else {
        e / denom
    }
}

/// Derivative of [`sigmoid`], `f(u)(1 - f(u))`.
#[inline]
pub fn dsigmoid(u: f64) -> f64 {
    let e = (-u.abs()).exp();
    let denom = 1.0 + e;
    e / (denom * denom)
}

/// `log(1 + e^t)`.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Average negative log-likelihood of the logistic model.
pub fn neg_log_likelihood(ds: &Dataset, beta: ArrayView1<f64>) -> Result<f64> {
    ds.check_beta(beta)?;
    let eta = ds.x.dot(&beta);
    Ok(nll_from_linear_predictor(eta.view(), ds.y.view()))
}

pub(crate) fn nll_from_linear_predictor(eta: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    let total: f64 = eta
        .iter()
        .zip(y.iter())
        .map(|(&t, &yi)| softplus(t) - yi * t)
        .sum();
    total / eta.len() as f64
}

/// Gradient `(1/n) X^T (f(X beta) - y)` of [`neg_log_likelihood`].
pub fn nll_gradient(ds: &Dataset, beta: ArrayView1<f64>) -> Result<Array1<f64>> {
    ds.check_beta(beta)?;
    let eta = ds.x.dot(&beta);
    Ok(score(&ds.x, ds.y.view(), eta.view()))
}

/// `(1/n) X^T (f(eta) - y)` for an arbitrary real-valued `y`.
pub(crate) fn score(x: &Array2<f64>, y: ArrayView1<f64>, eta: ArrayView1<f64>) -> Array1<f64> {
    let resid: Array1<f64> = eta
        .iter()
        .zip(y.iter())
        .map(|(&t, &yi)| sigmoid(t) - yi)
        .collect();
    x.t().dot(&resid) / x.nrows() as f64
}

/// Uniform random partition into an estimation half of `floor(fraction * n)`
/// rows and an inference half with the rest. Row order inside each half
/// follows the parent.
pub fn split_samples(ds: &Dataset, fraction: f64, seed: u64) -> Result<SplitDataset> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::DegenerateSplit(format!(
            "fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = ds.n();
    let n1 = (fraction * n as f64).floor() as usize;
    if n1 < 2 || n - n1 < 2 {
        return Err(Error::DegenerateSplit(format!(
            "halves of size {n1} and {} from n={n}; both need at least 2 rows",
            n - n1
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut d1_rows = order[..n1].to_vec();
    let mut d2_rows = order[n1..].to_vec();
    d1_rows.sort_unstable();
    d2_rows.sort_unstable();
    Ok(SplitDataset {
        d1: ds.select_rows(&d1_rows),
        d2: ds.select_rows(&d2_rows),
        d1_rows,
        d2_rows,
        split_seed: seed,
    })
}
