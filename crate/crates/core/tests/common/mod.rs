//! Brute-force reference implementations. None of these call into the
//! crate's solvers; they exist to check them.
#![allow(dead_code, clippy::needless_range_loop)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense Gaussian elimination with partial pivoting. `None` if singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[piv][k].abs() < 1e-11 * scale {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in (k + 1)..n {
            let f = a[i][k] / a[k][k];
            if f != 0.0 {
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    rec(0, n, k, &mut Vec::with_capacity(k), f);
}

/// `min c^T x` over `{x : G x <= h}` by enumerating every vertex, i.e. every
/// point where `d` linearly independent constraints are tight. Assumes the
/// polyhedron is pointed and the optimum is attained.
pub fn vertex_min(c: &[f64], g: &[Vec<f64>], h: &[f64]) -> Option<(f64, Vec<f64>)> {
    let d = c.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    combinations(g.len(), d, &mut |rows| {
        let a: Vec<Vec<f64>> = rows.iter().map(|&i| g[i].clone()).collect();
        let b: Vec<f64> = rows.iter().map(|&i| h[i]).collect();
        let Some(x) = gauss_solve(a, b) else { return };
        let feasible = g.iter().zip(h).all(|(row, &hi)| {
            let lhs: f64 = row.iter().zip(&x).map(|(a, x)| a * x).sum();
            let mag: f64 = row.iter().zip(&x).map(|(a, x)| (a * x).abs()).sum();
            lhs - hi <= 1e-9 * (1.0 + hi.abs() + mag)
        });
        if feasible {
            let obj: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, x));
            }
        }
    });
    best
}

/// `min c^T x` subject to `A x <= b`, `x >= 0`.
pub fn lp_vertex_oracle(
    c: &Array1<f64>,
    a: &Array2<f64>,
    b: &Array1<f64>,
) -> Option<(f64, Vec<f64>)> {
    let m = c.len();
    let mut g: Vec<Vec<f64>> = a.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut h: Vec<f64> = b.to_vec();
    for j in 0..m {
        let mut row = vec![0.0; m];
        row[j] = -1.0;
        g.push(row);
        h.push(0.0);
    }
    vertex_min(c.as_slice().unwrap(), &g, &h)
}

/// Random bounded LP: `k` rows, `m` variables, plus `sum x <= bound`.
pub fn random_bounded_lp(rng: &mut ChaCha8Rng, k: usize, m: usize) -> (Array1<f64>, Array2<f64>, Array1<f64>) {
    let c = Array1::from_shape_fn(m, |_| rng.gen_range(-2.0..2.0));
    let mut a = Array2::from_shape_fn((k + 1, m), |_| rng.gen_range(-1.0..1.0));
    let mut b = Array1::from_shape_fn(k + 1, |_| rng.gen_range(-0.5..2.0));
    a.row_mut(k).fill(1.0);
    b[k] = rng.gen_range(1.0..5.0);
    (c, a, b)
}

/// Minimal `||theta||_1` of the selector program written directly in the
/// original units:
///
/// ```text
/// |D^T (r - D theta)|_j <= eta rho sqrt(n) ||r||   for every j
/// r^T (r - D theta)     >= rho0 rho ||r||^2 / 2
/// rho0 <= rho <= 1
/// ```
///
/// Variables are `(theta+, theta-, rho)`. Returns `(l1, theta, rho)`.
pub fn mds_vertex_oracle(
    r: ArrayView1<f64>,
    d: ArrayView2<f64>,
    eta: f64,
    rho0: f64,
) -> Option<(f64, Vec<f64>, f64)> {
    let (n, q) = d.dim();
    let dim = 2 * q + 1;
    let rr = r.dot(&r);
    let bound = eta * (n as f64).sqrt() * rr.sqrt();
    let mut g = Vec::new();
    let mut h = Vec::new();
    for j in 0..q {
        let col_j = d.column(j);
        let g_j = col_j.dot(&r);
        // row_j(D^T D) theta
        let gram: Vec<f64> = (0..q).map(|l| col_j.dot(&d.column(l))).collect();
        // g_j - gram theta <= bound rho
        let mut up = vec![0.0; dim];
        // gram theta - g_j <= bound rho
        let mut lo = vec![0.0; dim];
        for l in 0..q {
            up[l] = -gram[l];
            up[q + l] = gram[l];
            lo[l] = gram[l];
            lo[q + l] = -gram[l];
        }
        up[2 * q] = -bound;
        lo[2 * q] = -bound;
        g.push(up);
        h.push(-g_j);
        g.push(lo);
        h.push(g_j);
    }
    let mut energy = vec![0.0; dim];
    for l in 0..q {
        let g_l = d.column(l).dot(&r);
        energy[l] = g_l;
        energy[q + l] = -g_l;
    }
    energy[2 * q] = rho0 * rr / 2.0;
    g.push(energy);
    h.push(rr);
    let mut upper = vec![0.0; dim];
    upper[2 * q] = 1.0;
    g.push(upper);
    h.push(1.0);
    let mut lower = vec![0.0; dim];
    lower[2 * q] = -1.0;
    g.push(lower);
    h.push(-rho0);
    for j in 0..2 * q {
        let mut row = vec![0.0; dim];
        row[j] = -1.0;
        g.push(row);
        h.push(0.0);
    }
    let mut c = vec![1.0; dim];
    c[2 * q] = 0.0;
    let (obj, x) = vertex_min(&c, &g, &h)?;
    let theta = (0..q).map(|l| x[l] - x[q + l]).collect();
    Some((obj, theta, x[2 * q]))
}

/// Standard normal CDF by composite Simpson quadrature of the density.
pub fn phi_simpson(x: f64) -> f64 {
    let steps = 4000;
    let a = 0.0;
    let b = x.abs().min(12.0);
    let hstep = (b - a) / steps as f64;
    let dens = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = dens(a) + dens(b);
    for i in 1..steps {
        let t = a + i as f64 * hstep;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * dens(t);
    }
    let half = s * hstep / 3.0;
    if x >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Inverse of [`phi_simpson`] by bisection.
pub fn quantile_bisect(q: f64) -> f64 {
    let (mut lo, mut hi) = (-12.0, 12.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phi_simpson(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Minimizer of a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// One-dimensional penalized logistic objective written from scratch.
pub fn scalar_lasso_objective(x: &[f64], y: &[f64], lambda: f64, b: f64) -> f64 {
    let n = x.len() as f64;
    let nll: f64 = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let u = xi * b;
            (1.0 + u.exp()).ln() - yi * u
        })
        .sum::<f64>()
        / n;
    nll + lambda * b.abs()
}

pub fn random_binary_data(n: usize, p: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.gen_range(-1.5..1.5));
    let mut y = Array1::from_shape_fn(n, |_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
    y[0] = 0.0;
    y[1] = 1.0;
    (x, y)
}
