//! First-order reconstruction of the logistic model as a linear model around
//! the pilot estimate.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::model::{dsigmoid, sigmoid, Dataset};

/// Pseudo-linear data evaluated on the inference half.
///
/// `y_new = y - f(u) + f'(u) u` and `X_new = f'(u) X` with `u = X beta_hat`;
/// `z` is the tested column of `X_new`, `w` the remaining columns and
/// `v = y_new - z * beta0`.
#[derive(Debug, Clone)]
pub struct LinearizedData {
    pub v: Array1<f64>,
    pub z: Array1<f64>,
    pub w: Array2<f64>,
    pub beta0: f64,
    pub y_new: Array1<f64>,
    pub tested_index: usize,
}

pub fn linearize(
    d2: &Dataset,
    beta_hat: ArrayView1<f64>,
    tested_index: usize,
    beta0: f64,
) -> Result<LinearizedData> {
    let p = d2.p();
    if beta_hat.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "pilot estimate has length {} but p = {p}",
            beta_hat.len()
        )));
    }
    if tested_index >= p {
        return Err(Error::InvalidInput(format!(
            "tested index {tested_index} out of range for p={p}"
        )));
    }
    if !beta0.is_finite() {
        return Err(Error::NonFinite("beta0".into()));
    }
    let u = d2.x().dot(&beta_hat);
    if let Some(i) = u.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!(
            "linear predictor at row {i} (divergent pilot fit)"
        )));
    }
    let slope = u.mapv(dsigmoid);
    let y_new: Array1<f64> = u
        .iter()
        .zip(slope.iter())
        .zip(d2.y().iter())
        .map(|((&ui, &si), &yi)| yi - sigmoid(ui) + si * ui)
        .collect();
    let x_new = d2.x() * &slope.view().insert_axis(Axis(1));
    let z = x_new.column(tested_index).to_owned();
    let keep: Vec<usize> = (0..p).filter(|&j| j != tested_index).collect();
    let w = x_new.select(Axis(1), &keep);
    let v = &y_new - &(&z * beta0);
    Ok(LinearizedData {
        v,
        z,
        w,
        beta0,
        y_new,
        tested_index,
    })
}

/// Same data with the pseudo-response rebuilt for a new hypothesized value.
pub fn rebuild_v(ld: &LinearizedData, beta0_new: f64) -> LinearizedData {
    let mut out = ld.clone();
    out.v = &ld.y_new - &(&ld.z * beta0_new);
    out.beta0 = beta0_new;
    out
}

impl LinearizedData {
    pub fn n(&self) -> usize {
        self.v.len()
    }

    /// Reassembles `X_new` by putting `z` back at the tested column.
    pub fn x_new(&self) -> Array2<f64> {
        let (n, q) = self.w.dim();
        let mut out = Array2::zeros((n, q + 1));
        let mut src = 0;
        for j in 0..=q {
            if j == self.tested_index {
                out.column_mut(j).assign(&self.z);
            } else {
                out.column_mut(j).assign(&self.w.column(src));
                src += 1;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, p: usize, seed: u64) -> (Dataset, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.gen_range(-2.0..2.0));
        let y = Array1::from_shape_fn(n, |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
        let beta = Array1::from_shape_fn(p, |_| rng.gen_range(-1.0..1.0));
        (Dataset::new(x, y).unwrap(), beta)
    }

    fn identity_gap(ds: &Dataset, beta: &Array1<f64>, ld: &LinearizedData) -> f64 {
        let x_new = ld.x_new();
        let fitted = x_new.dot(beta);
        let u = ds.x().dot(beta);
        (0..ds.n())
            .map(|i| (ld.y_new[i] - fitted[i] - (ds.y()[i] - sigmoid(u[i]))).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_pilot_constants() {
        let (ds, _) = random(8, 3, 1);
        let ld = linearize(&ds, Array1::zeros(3).view(), 0, 0.7).unwrap();
        for i in 0..8 {
            assert_eq!(ld.y_new[i], ds.y()[i] - 0.5);
            assert_eq!(ld.z[i], 0.25 * ds.x()[[i, 0]]);
            assert_eq!(ld.w[[i, 1]], 0.25 * ds.x()[[i, 2]]);
        }
    }

    #[test]
    fn exact_identity_random_10x4() {
        let (ds, beta) = random(10, 4, 2);
        let ld = linearize(&ds, beta.view(), 1, 0.3).unwrap();
        assert!(identity_gap(&ds, &beta, &ld) <= 1e-12);
    }

    #[test]
    fn zero_beta0_gives_y_new() {
        let (ds, beta) = random(10, 4, 3);
        let ld = linearize(&ds, beta.view(), 2, 0.0).unwrap();
        assert_eq!(ld.v, ld.y_new);
    }

    #[test]
    fn errors() {
        let (ds, beta) = random(10, 4, 3);
        assert!(matches!(
            linearize(&ds, beta.view(), 4, 0.0),
            Err(Error::InvalidInput(_))
        ));
        assert!(linearize(&ds, Array1::zeros(3).view(), 0, 0.0).is_err());
        let mut bad = beta.clone();
        bad[0] = f64::INFINITY;
        assert!(matches!(
            linearize(&ds, bad.view(), 0, 0.0),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn rebuild_examples() {
        let (ds, beta) = random(10, 4, 4);
        let ld = linearize(&ds, beta.view(), 0, 0.4).unwrap();
        assert_eq!(rebuild_v(&ld, 0.4).v, ld.v);
        assert_eq!(rebuild_v(&ld, 0.0).v, ld.y_new);
        let a = rebuild_v(&ld, 0.3);
        let b = rebuild_v(&ld, -0.2);
        let expected = &ld.z * 0.5 * -1.0;
        for i in 0..10 {
            // v(a) - v(b) = (b - a) z
            assert!((a.v[i] - b.v[i] - expected[i]).abs() < 1e-15);
        }
        assert_eq!(a.w, ld.w);
        assert_eq!(a.y_new, ld.y_new);
    }

    proptest! {
        #[test]
        fn reconstruction_and_identity(n in 2usize..50, p in 2usize..20, seed in 0u64..5000,
                                       beta0 in -3.0f64..3.0) {
            let (ds, beta) = random(n, p, seed);
            let idx = (seed as usize) % p;
            let ld = linearize(&ds, beta.view(), idx, beta0).unwrap();
            for i in 0..n {
                prop_assert!((ld.v[i] + ld.z[i] * beta0 - ld.y_new[i]).abs() <= 1e-14);
            }
            prop_assert!(identity_gap(&ds, &beta, &ld) <= 1e-12);
            let slope = ds.x().dot(&beta).mapv(dsigmoid);
            let x_new = ds.x() * &slope.insert_axis(Axis(1));
            prop_assert_eq!(ld.x_new(), x_new);
        }
    }
}
