//! Small dense factorizations: Cholesky for covariance sampling and LU with
//! partial pivoting for basis solves in the simplex solver.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Lower-triangular `L` with `L L^T = sigma`.
pub fn cholesky(sigma: &Array2<f64>) -> Result<Array2<f64>> {
    let (rows, cols) = sigma.dim();
    if rows != cols {
        return Err(Error::DimensionMismatch(format!(
            "covariance is {rows}x{cols}"
        )));
    }
    let n = rows;
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (sigma[[i, j]], sigma[[j, i]]);
            if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = sigma[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) {
            return Err(Error::NotPositiveDefinite { index: j, pivot: diag });
        }
        let d = diag.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = sigma[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// LU factorization `P A = L U` of a square matrix.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Array2<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Fails if a pivot falls below `pivot_tol` relative to the largest
    /// entry of `a`.
    pub fn factor(a: &Array2<f64>, pivot_tol: f64) -> Result<Lu> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch("LU of a non-square matrix".into()));
        }
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (pivot_row, pivot_abs) = (k..n)
                .map(|i| (i, lu[[i, k]].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs < pivot_tol * scale {
                return Err(Error::SolverFailure(format!(
                    "singular basis (pivot {pivot_abs:e} in column {k})"
                )));
            }
            if pivot_row != k {
                for j in 0..n {
                    lu.swap([k, j], [pivot_row, j]);
                }
                perm.swap(k, pivot_row);
            }
            let pivot = lu[[k, k]];
            for i in (k + 1)..n {
                let factor = lu[[i, k]] / pivot;
                lu[[i, k]] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        lu[[i, j]] -= factor * lu[[k, j]];
                    }
                }
            }
        }
        Ok(Lu { lu, perm })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.perm.len();
        let mut x: Array1<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu[[i, k]] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.lu[[i, k]] * x[k];
            }
            x[i] = s / self.lu[[i, i]];
        }
        x
    }

    /// Solves `A^T y = c`.
    pub fn solve_transpose(&self, c: &Array1<f64>) -> Array1<f64> {
        let n = self.perm.len();
        // A^T = U^T L^T P, so solve U^T s = c, then L^T t = s, then y = P^T t.
        let mut s = c.clone();
        for i in 0..n {
            let mut acc = s[i];
            for k in 0..i {
                acc -= self.lu[[k, i]] * s[k];
            }
            s[i] = acc / self.lu[[i, i]];
        }
        for i in (0..n).rev() {
            let mut acc = s[i];
            for k in (i + 1)..n {
                acc -= self.lu[[k, i]] * s[k];
            }
            s[i] = acc;
        }
        let mut y = Array1::zeros(n);
        for (i, &p) in self.perm.iter().enumerate() {
            y[p] = s[i];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toeplitz(p: usize, rho: f64) -> Array2<f64> {
        Array2::from_shape_fn((p, p), |(i, j)| rho.powi((i as i32 - j as i32).abs()))
    }

    #[test]
    fn cholesky_identity() {
        let eye = Array2::<f64>::eye(5);
        assert_eq!(cholesky(&eye).unwrap(), eye);
    }

    #[test]
    fn cholesky_two_by_two() {
        let l = cholesky(&array![[1.0, 0.4], [0.4, 1.0]]).unwrap();
        assert_eq!(l[[0, 0]], 1.0);
        assert_eq!(l[[0, 1]], 0.0);
        assert!((l[[1, 0]] - 0.4).abs() < 1e-15);
        assert!((l[[1, 1]] - 0.84f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn cholesky_reconstructs_toeplitz() {
        let sigma = toeplitz(50, 0.4);
        let l = cholesky(&sigma).unwrap();
        let back = l.dot(&l.t());
        let err = (&back - &sigma).mapv(|v| v * v).sum().sqrt();
        let norm = sigma.mapv(|v| v * v).sum().sqrt();
        assert!(err / norm < 1e-10);
        for i in 0..50 {
            for j in (i + 1)..50 {
                assert_eq!(l[[i, j]], 0.0);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite_and_asymmetric() {
        let err = cholesky(&array![[1.0, 2.0], [2.0, 1.0]]).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { index: 1, .. }));
        assert!(cholesky(&array![[1.0, 0.1], [0.2, 1.0]]).is_err());
    }

    #[test]
    fn lu_solves_both_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Array2::from_shape_fn((6, 6), |_| rng.gen_range(-1.0..1.0));
        let b = Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0));
        let lu = Lu::factor(&a, 1e-12).unwrap();
        let x = lu.solve(&b);
        assert!((a.dot(&x) - &b).iter().all(|r| r.abs() < 1e-12));
        let y = lu.solve_transpose(&b);
        assert!((a.t().dot(&y) - &b).iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn lu_flags_singular() {
        assert!(Lu::factor(&array![[1.0, 2.0], [2.0, 4.0]], 1e-12).is_err());
    }
}
